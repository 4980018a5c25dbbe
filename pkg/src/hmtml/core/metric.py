from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import cdist

from hmtml.core.errors import RejectedInputError
from hmtml.core.models import DomainData, Metric

MetricLike = Union[Metric, np.ndarray]


def recover_metric(factor: np.ndarray) -> Metric:
    """A = U U^T."""
    factor = np.asarray(factor, dtype=np.float64)
    matrix = factor @ factor.T
    return Metric(matrix=0.5 * (matrix + matrix.T), factor=factor)


def transform(factor: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Map samples into the shared r-dimensional space: X U."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[1] != factor.shape[0]:
        raise RejectedInputError(
            "sample dimension does not match the factor",
            dim=samples.shape[1],
            factor_rows=factor.shape[0],
        )
    return samples @ factor


def _as_metric(metric: MetricLike) -> Metric:
    if isinstance(metric, Metric):
        return metric
    return Metric(matrix=np.asarray(metric, dtype=np.float64))


def mahalanobis_sq(
    x: np.ndarray,
    y: np.ndarray,
    metric: Optional[MetricLike] = None,
    factor: Optional[np.ndarray] = None,
) -> float:
    """(x - y)^T A (x - y), or ||U^T x - U^T y||^2 when a factor is given."""
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    if factor is not None:
        factor = np.asarray(factor, dtype=np.float64)
        if diff.shape != (factor.shape[0],):
            raise RejectedInputError("vector dimension does not match the factor", dim=diff.shape)
        projected = factor.T @ diff
        return float(projected @ projected)
    if metric is None:
        raise RejectedInputError("either a metric or a factor is required")
    matrix = _as_metric(metric).matrix
    if diff.shape != (matrix.shape[0],):
        raise RejectedInputError("vector dimension does not match the metric", dim=diff.shape)
    return float(diff @ matrix @ diff)


def pairwise_distances(queries: np.ndarray, train: np.ndarray, metric: MetricLike) -> np.ndarray:
    """Squared Mahalanobis distances, queries x train."""
    metric = _as_metric(metric)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != metric.dim or train.shape[1] != metric.dim:
        raise RejectedInputError(
            "sample dimension does not match the metric",
            query_dim=queries.shape[1],
            train_dim=train.shape[1],
            metric_dim=metric.dim,
        )
    if metric.factor is not None:
        return cdist(queries @ metric.factor, train @ metric.factor, metric="sqeuclidean")
    distances = np.empty((queries.shape[0], train.shape[0]))
    for i, query in enumerate(queries):
        diffs = train - query
        distances[i] = np.einsum("nd,de,ne->n", diffs, metric.matrix, diffs)
    return distances


def knn_predict(
    train: DomainData, queries: np.ndarray, metric: MetricLike, k: int = 1
) -> np.ndarray:
    """
    Majority vote of the k nearest training samples.

    Equal distances keep training order; vote ties go to the class with the
    smallest summed neighbor distance, then to the lowest class id.
    """
    if k < 1:
        raise RejectedInputError("k must be at least 1", k=k)
    if k > train.n_samples:
        raise RejectedInputError("k exceeds the training set size", k=k, n_train=train.n_samples)
    distances = pairwise_distances(queries, train.samples, metric)
    neighbors = np.argsort(distances, axis=1, kind="stable")[:, :k]

    predictions = np.empty(distances.shape[0], dtype=np.int64)
    for i, row in enumerate(neighbors):
        labels = train.labels[row]
        if k == 1:
            predictions[i] = labels[0]
            continue
        classes, counts = np.unique(labels, return_counts=True)
        summed = np.array([distances[i, row][labels == c].sum() for c in classes])
        # lexsort: last key is primary
        best = np.lexsort((classes, summed, -counts))[0]
        predictions[i] = classes[best]
    return predictions
