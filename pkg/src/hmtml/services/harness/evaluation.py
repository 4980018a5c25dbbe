import itertools
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import structlog
from sklearn.metrics import accuracy_score, f1_score

from hmtml.core.config import EncodingConfig, HmtmlConfig
from hmtml.core.encoding import encode_tasks
from hmtml.core.errors import HmtmlError, RejectedInputError
from hmtml.core.metric import MetricLike, knn_predict, recover_metric
from hmtml.core.models import Codebook, DomainData
from hmtml.core.optimizer import fit

logger = structlog.get_logger(__name__)


def _check_labels(predictions: np.ndarray, truth: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape or predictions.ndim != 1:
        raise RejectedInputError(
            "predictions and truth must be vectors of equal length",
            predictions=predictions.shape,
            truth=truth.shape,
        )
    if truth.size == 0:
        raise RejectedInputError("nothing to score")
    return predictions, truth


def accuracy(predictions: np.ndarray, truth: np.ndarray) -> float:
    predictions, truth = _check_labels(predictions, truth)
    return float(accuracy_score(truth, predictions))


def macro_f1(predictions: np.ndarray, truth: np.ndarray, n_classes: int) -> float:
    """
    Unweighted mean of per-class F1 over classes 1..C.

    A class that never occurs in either vector scores 0.
    """
    predictions, truth = _check_labels(predictions, truth)
    labels = np.arange(1, n_classes + 1)
    if np.any(~np.isin(predictions, labels)) or np.any(~np.isin(truth, labels)):
        raise RejectedInputError("labels must lie in 1..C", n_classes=n_classes)
    return float(f1_score(truth, predictions, labels=labels, average="macro", zero_division=0))


@dataclass(frozen=True)
class DomainScore:
    domain: int
    accuracy: float
    macro_f1: float


def evaluate_domains(
    train: Sequence[DomainData],
    test: Sequence[DomainData],
    metrics: Sequence[MetricLike],
    n_classes: int,
    k: int = 1,
) -> List[DomainScore]:
    """k-NN score of each domain's test pool against its labeled samples."""
    if not len(train) == len(test) == len(metrics):
        raise RejectedInputError("train, test and metrics must have one entry per domain")
    scores = []
    for labeled, pool, metric in zip(train, test, metrics):
        predicted = knn_predict(labeled, pool.samples, metric, k=k)
        scores.append(
            DomainScore(
                domain=labeled.domain_id,
                accuracy=accuracy(predicted, pool.labels),
                macro_f1=macro_f1(predicted, pool.labels, n_classes),
            )
        )
    return scores


def _fold_indices(data: DomainData, n_folds: int) -> List[np.ndarray]:
    # fold f holds out the f-th sample of every class
    folds = []
    for f in range(n_folds):
        held = [np.flatnonzero(data.labels == c)[f] for c in np.unique(data.labels)]
        folds.append(np.sort(np.array(held)))
    return folds


def loocv_select(
    labeled: Sequence[DomainData],
    gamma_grid: Sequence[float],
    gamma_m_grid: Sequence[float],
    config: HmtmlConfig,
    code: Codebook,
    encoding: EncodingConfig = EncodingConfig(),
    seed: int = 0,
    k: int = 1,
) -> Tuple[float, float, Dict[Tuple[float, float], float]]:
    """
    Pick (gamma, gamma_m) by leave-one-per-class-out cross validation.

    With n labeled samples per class there are n folds. Every fold re-encodes
    the remaining samples, fits each grid point and classifies the held-out
    samples; accuracies are averaged over domains and folds. Ties go to the
    smaller gamma, then the smaller gamma_m.

    Fewer than two labeled samples per class is rejected, except for a
    single-point grid: there is nothing to choose, so it is returned without
    fitting and its score is NaN.
    """
    grid = sorted(itertools.product(sorted(set(gamma_grid)), sorted(set(gamma_m_grid))))
    if not grid:
        raise RejectedInputError("empty hyperparameter grid")
    if not labeled:
        raise RejectedInputError("cross validation needs labeled domains")
    counts = [np.bincount(d.labels)[np.unique(d.labels)] for d in labeled]
    n_folds = int(min(c.min() for c in counts))
    if len(grid) == 1:
        return grid[0][0], grid[0][1], {grid[0]: float("nan")}
    if n_folds < 2:
        raise RejectedInputError("cross validation needs at least two labeled samples per class")

    totals = {point: 0.0 for point in grid}
    folds = [_fold_indices(d, n_folds) for d in labeled]
    for f in range(n_folds):
        train, held = [], []
        for data, domain_folds in zip(labeled, folds):
            mask = np.ones(data.n_samples, dtype=bool)
            mask[domain_folds[f]] = False
            train.append(data.subset(np.flatnonzero(mask)))
            held.append(data.subset(domain_folds[f]))
        weights = encode_tasks(train, code, encoding, seed)
        for gamma, gamma_m in grid:
            candidate = config.model_copy(update={"gamma": gamma, "gamma_m": gamma_m})
            try:
                state = fit(train, weights, candidate)
            except HmtmlError as exc:
                logger.warning(
                    "loocv.fit_failed", gamma=gamma, gamma_m=gamma_m, fold=f, error=exc.message
                )
                totals[(gamma, gamma_m)] = float("-inf")
                continue
            metrics = [recover_metric(u) for u in state.factors]
            neighbours = min(k, min(d.n_samples for d in train))
            scores = evaluate_domains(train, held, metrics, code.n_classes, k=neighbours)
            totals[(gamma, gamma_m)] += float(np.mean([s.accuracy for s in scores]))

    averages = {point: total / n_folds for point, total in totals.items()}
    best = grid[0]
    for point in grid[1:]:
        if averages[point] > averages[best]:
            best = point
    logger.info(
        "loocv.selected",
        gamma=best[0],
        gamma_m=best[1],
        accuracy=averages[best],
        folds=n_folds,
    )

    return best[0], best[1], averages
