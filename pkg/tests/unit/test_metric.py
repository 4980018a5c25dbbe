import numpy as np
import pytest
from scipy.spatial.distance import cdist

from hmtml.core.errors import RejectedInputError
from hmtml.core.metric import knn_predict, mahalanobis_sq, pairwise_distances, recover_metric, transform
from hmtml.core.models import DomainData, Metric


def euclidean_1nn(train, queries):
    distances = ((queries[:, None, :] - train.samples[None, :, :]) ** 2).sum(axis=2)
    return train.labels[np.argmin(distances, axis=1)]


def test_recover_metric_simple_cases():
    """Test A = U U^T for identity and zero factors."""
    np.testing.assert_array_equal(recover_metric(np.eye(3)).matrix, np.eye(3))
    assert not recover_metric(np.zeros((3, 2))).matrix.any()


def test_recovered_metric_is_psd_with_bounded_rank(rng):
    """Test that recovered metrics are symmetric PSD with rank at most r."""
    metric = recover_metric(rng.uniform(size=(5, 2)))
    eigenvalues = np.linalg.eigvalsh(metric.matrix)
    assert np.all(eigenvalues >= -1e-10)
    assert np.sum(eigenvalues > 1e-10) <= 2
    np.testing.assert_allclose(metric.matrix, metric.matrix.T, atol=1e-12)


def test_transform_projects_samples(rng):
    """Test projection into the shared subspace."""
    factor = rng.uniform(size=(4, 2))
    samples = rng.normal(size=(6, 4))
    np.testing.assert_allclose(transform(factor, samples), samples @ factor)
    with pytest.raises(RejectedInputError):
        transform(factor, rng.normal(size=(6, 3)))


def test_mahalanobis_forms_agree(rng):
    """Test the matrix and factor forms of the distance."""
    x, y = rng.normal(size=5), rng.normal(size=5)
    factor = rng.normal(size=(5, 2))
    assert mahalanobis_sq(x, x, np.eye(5)) == 0.0
    assert mahalanobis_sq(x, y, np.eye(5)) == pytest.approx(float(np.sum((x - y) ** 2)))
    assert mahalanobis_sq(x, y, recover_metric(factor)) == pytest.approx(
        mahalanobis_sq(x, y, factor=factor), abs=1e-10
    )


def test_mahalanobis_rejects_dimension_mismatch(rng):
    """Test distance input checks."""
    with pytest.raises(RejectedInputError):
        mahalanobis_sq(np.ones(3), np.ones(3), np.eye(4))
    with pytest.raises(RejectedInputError):
        mahalanobis_sq(np.ones(3), np.ones(3), factor=np.ones((4, 1)))
    with pytest.raises(RejectedInputError, match="metric or a factor"):
        mahalanobis_sq(np.ones(3), np.ones(3))


def test_pairwise_distances_factored_and_dense_agree(rng):
    """Test the factored and dense distance paths."""
    factor = rng.normal(size=(4, 3))
    queries, train = rng.normal(size=(5, 4)), rng.normal(size=(7, 4))
    factored = pairwise_distances(queries, train, recover_metric(factor))
    dense = pairwise_distances(queries, train, factor @ factor.T)
    np.testing.assert_allclose(factored, dense, atol=1e-10)


def test_query_on_training_point_returns_its_label(rng):
    """Test that a training point is its own neighbour."""
    train = DomainData(rng.normal(size=(6, 3)), np.array([1, 2, 3, 1, 2, 3]))
    predicted = knn_predict(train, train.samples[[4]], Metric.identity(3))
    assert predicted.tolist() == [2]


def test_zero_metric_falls_back_to_tie_break():
    """Test tie breaking when every distance is zero."""
    train = DomainData(np.array([[0.0], [1.0], [2.0]]), np.array([3, 2, 2]))
    zero = np.zeros((1, 1))
    assert knn_predict(train, np.array([[5.0]]), zero, k=1).tolist() == [3]
    # every vote ties on distance: the larger class wins the count
    assert knn_predict(train, np.array([[5.0]]), zero, k=3).tolist() == [2]
    assert knn_predict(train, np.array([[5.0]]), zero, k=2).tolist() == [2]


def test_three_point_hand_metric():
    """Test a hand-computed 1-D metric."""
    train = DomainData(np.array([[0.0], [1.0], [3.0]]), np.array([1, 2, 3]))
    metric = np.array([[4.0]])
    # distances from 1.9: 14.44, 3.24, 4.84
    assert knn_predict(train, np.array([[1.9]]), metric).tolist() == [2]
    # k=2 votes tie one-one, class 2 has the smaller summed distance
    assert knn_predict(train, np.array([[1.9]]), metric, k=2).tolist() == [2]


def test_vote_tie_goes_to_lowest_class_after_distance():
    """Test the lowest class wins a full tie."""
    train = DomainData(np.array([[-1.0], [1.0]]), np.array([2, 1]))
    assert knn_predict(train, np.array([[0.0]]), np.eye(1), k=2).tolist() == [1]


def test_identity_metric_matches_euclidean_oracle(rng):
    """Test the identity metric against Euclidean 1-NN."""
    train = DomainData(rng.normal(size=(30, 4)), rng.integers(1, 5, size=30))
    queries = rng.normal(size=(25, 4))
    predicted = knn_predict(train, queries, Metric.identity(4))
    np.testing.assert_array_equal(predicted, euclidean_1nn(train, queries))


def test_one_nn_invariant_to_metric_scaling(rng):
    """Test that scaling the metric leaves 1-NN unchanged."""
    train = DomainData(rng.normal(size=(20, 3)), rng.integers(1, 4, size=20))
    queries = rng.normal(size=(15, 3))
    base = recover_metric(rng.uniform(size=(3, 2))).matrix
    np.testing.assert_array_equal(
        knn_predict(train, queries, base), knn_predict(train, queries, 7.5 * base)
    )


def test_knn_rejects_bad_k(rng):
    """Test k-NN neighbour count checks."""
    train = DomainData(rng.normal(size=(4, 2)), np.array([1, 1, 2, 2]))
    with pytest.raises(RejectedInputError, match="exceeds"):
        knn_predict(train, rng.normal(size=(1, 2)), np.eye(2), k=5)
    with pytest.raises(RejectedInputError, match="at least 1"):
        knn_predict(train, rng.normal(size=(1, 2)), np.eye(2), k=0)


def test_cdist_reference_for_identity(rng):
    """Test identity distances against scipy."""
    train, queries = rng.normal(size=(8, 3)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(
        pairwise_distances(queries, train, Metric.identity(3)),
        cdist(queries, train, metric="sqeuclidean"),
        atol=1e-12,
    )


@pytest.mark.parametrize(
    "matrix, message",
    [
        ([[-1.0, 0.0], [0.0, 1.0]], "semidefinite"),
        ([[1.0, 0.5], [0.0, 1.0]], "symmetric"),
        ([[1.0, 0.0, 0.0]], "square"),
    ],
)
def test_invalid_metrics_are_rejected(matrix, message):
    """Test that indefinite, asymmetric and non-square matrices never reach a distance."""
    with pytest.raises(RejectedInputError, match=message):
        mahalanobis_sq(np.array([1.0, 0.0]), np.zeros(2), np.array(matrix))
    with pytest.raises(RejectedInputError, match=message):
        Metric(np.array(matrix))
