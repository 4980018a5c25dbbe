import math
import warnings
from typing import List, Optional, Sequence

import numpy as np
import structlog
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

from hmtml.core.config import EncodingConfig
from hmtml.core.errors import GenerationFailureError, RejectedInputError
from hmtml.core.models import Codebook, DomainData, TaskWeights

logger = structlog.get_logger(__name__)

_SYMBOLS = np.array([-1, 0, 1], dtype=np.int8)
_SYMBOL_PROBS = np.array([0.25, 0.5, 0.25])


def num_tasks(n_classes: int, log_base: float = 2.0) -> int:
    """Code length P = 10 * ceil(1.5 * log(C))."""
    if n_classes < 2:
        raise RejectedInputError("need at least two classes", n_classes=n_classes)
    return 10 * math.ceil(1.5 * math.log(n_classes, log_base))


def _distinct_valid_columns(n_classes: int) -> int:
    # columns over {-1,0,1}^C holding at least one +1 and one -1
    return 3**n_classes - 2 ** (n_classes + 1) + 1


def generate_codebook(
    n_classes: int, n_tasks: int, seed: int, max_attempts: int = 200
) -> Codebook:
    """
    Sparse random ECOC design.

    Entries are 0 with probability 1/2 and +1/-1 with 1/4 each. Columns
    missing either sign are redrawn, duplicates too while distinct valid
    columns remain. A draw leaving some class in no task is discarded.
    """
    if n_classes < 2 or n_tasks < 1:
        raise RejectedInputError("need C >= 2 and P >= 1", n_classes=n_classes, n_tasks=n_tasks)
    rng = np.random.default_rng(seed)
    allow_repeats = n_tasks > _distinct_valid_columns(n_classes)
    max_draws = 1000 * n_tasks

    for attempt in range(max_attempts):
        columns: List[np.ndarray] = []
        seen = set()
        draws = 0
        while len(columns) < n_tasks and draws < max_draws:
            draws += 1
            column = rng.choice(_SYMBOLS, size=n_classes, p=_SYMBOL_PROBS)
            if not (np.any(column == 1) and np.any(column == -1)):
                continue
            key = column.tobytes()
            if key in seen and not allow_repeats:
                continue
            seen.add(key)
            columns.append(column)
        if len(columns) < n_tasks:
            continue
        matrix = np.stack(columns, axis=1)
        if np.any(np.all(matrix == 0, axis=1)):
            continue
        logger.debug("codebook.generated", classes=n_classes, tasks=n_tasks, attempts=attempt + 1)
        return Codebook(matrix=matrix, seed=seed, repeated_columns=len(seen) < n_tasks)

    raise GenerationFailureError(
        "could not draw a valid codebook",
        n_classes=n_classes,
        n_tasks=n_tasks,
        attempts=max_attempts,
    )


def _random_unit(dim: int, seed: Sequence[int]) -> np.ndarray:
    vector = np.random.default_rng(list(seed)).standard_normal(dim)
    return vector / np.linalg.norm(vector)


def train_base_classifiers(
    data: DomainData,
    code: Codebook,
    config: Optional[EncodingConfig] = None,
    seed: int = 0,
) -> TaskWeights:
    """
    Fit one bias-free linear hinge-loss SVM per codebook column.

    Classes coded 0 for a task are left out of it. Tasks with an empty side
    are reported in ``dropped``; degenerate weights are swapped for a seeded
    random unit vector and reported in ``replaced``.
    """
    config = config or EncodingConfig()
    if int(data.labels.max()) > code.n_classes:
        raise RejectedInputError(
            "labels exceed the codebook's class count",
            max_label=int(data.labels.max()),
            n_classes=code.n_classes,
        )
    codes = code.matrix[data.labels - 1]
    kept: List[int] = []
    dropped: List[int] = []
    replaced: List[int] = []
    columns: List[np.ndarray] = []

    for task in range(code.n_tasks):
        targets = codes[:, task]
        mask = targets != 0
        if not (np.any(targets == 1) and np.any(targets == -1)):
            dropped.append(task)
            continue
        svm = LinearSVC(
            C=config.svm_penalty,
            loss="hinge",
            fit_intercept=False,
            dual=True,
            tol=config.svm_tol,
            max_iter=config.svm_max_iter,
            random_state=seed,
        )
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            svm.fit(data.samples[mask], targets[mask])
        if any(issubclass(w.category, ConvergenceWarning) for w in caught):
            logger.warning("encoding.svm_not_converged", domain=data.domain_id, task=task)

        weight = svm.coef_.ravel().astype(np.float64)
        norm = float(np.linalg.norm(weight))
        if not np.isfinite(norm) or norm < 1e-12:
            weight = _random_unit(data.dim, (seed, data.domain_id, task))
            replaced.append(task)
        else:
            weight = weight / norm
        kept.append(task)
        columns.append(weight)

    if dropped:
        logger.info("encoding.tasks_dropped", domain=data.domain_id, tasks=dropped)
    if replaced:
        logger.info("encoding.weights_replaced", domain=data.domain_id, tasks=replaced)
    weights = np.stack(columns, axis=1) if columns else np.zeros((data.dim, 0))
    return TaskWeights(
        weights=weights,
        domain_id=data.domain_id,
        task_ids=tuple(kept),
        replaced=tuple(replaced),
        dropped=tuple(dropped),
    )


def encode_tasks(
    domains: Sequence[DomainData],
    code: Codebook,
    config: Optional[EncodingConfig] = None,
    seed: int = 0,
) -> List[TaskWeights]:
    """Train every domain against the shared codebook and align their task columns."""
    trained = [train_base_classifiers(d, code, config, seed) for d in domains]
    common = set(range(code.n_tasks))
    for weights in trained:
        common &= set(weights.task_ids)
    if not common:
        raise RejectedInputError("no task has both sides represented in every domain")
    common_ids = tuple(sorted(common))
    dropped = tuple(sorted(set(range(code.n_tasks)) - common))

    aligned = []
    for weights in trained:
        positions = [weights.task_ids.index(t) for t in common_ids]
        aligned.append(
            TaskWeights(
                weights=weights.weights[:, positions],
                domain_id=weights.domain_id,
                task_ids=common_ids,
                replaced=tuple(t for t in weights.replaced if t in common),
                dropped=dropped,
            )
        )
    return aligned
