"""
Unsupervised feature preprocessing applied per domain before the split.

Kernel PCA follows the usual recipe: Gram matrix, double centering,
eigendecomposition. Component j of a sample is its centered kernel row
projected on v_j / sqrt(lambda_j), so training features have variance
lambda_j / N along component j.
"""

from typing import Literal, Optional

import numpy as np
import structlog
from scipy.linalg import eigh
from scipy.spatial.distance import pdist
from sklearn.metrics.pairwise import linear_kernel, rbf_kernel
from sklearn.preprocessing import KernelCenterer, StandardScaler, normalize

from hmtml.core.errors import RejectedInputError
from hmtml.core.models import DomainData, KpcaModel

logger = structlog.get_logger(__name__)

EIGEN_FLOOR = 1e-12
Method = Literal["none", "center", "normalize", "kpca", "pca"]


def _gram(kernel: str, bandwidth: Optional[float], a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if kernel == "rbf":
        # exp(-||x - y||^2 / (2 w^2))
        return rbf_kernel(a, b, gamma=1.0 / (2.0 * bandwidth**2))
    return linear_kernel(a, b)


def kpca_fit(
    samples: np.ndarray,
    n_components: Optional[int] = None,
    energy: Optional[float] = None,
    kernel: Literal["rbf", "linear"] = "rbf",
    bandwidth: Optional[float] = None,
) -> KpcaModel:
    """
    Fit kernel PCA on ``samples``.

    Exactly one of ``n_components`` (top-q) or ``energy`` (smallest q whose
    cumulative eigenvalue mass reaches the fraction) may be given; with
    neither, every component above the eigenvalue floor is kept. The Gaussian
    bandwidth defaults to the mean distance over all training pairs.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise RejectedInputError(
            "kernel PCA needs an N x d matrix with N >= 2", shape=samples.shape
        )
    if n_components is not None and energy is not None:
        raise RejectedInputError("give either n_components or energy, not both")
    n = samples.shape[0]
    if n_components is not None and not 1 <= n_components <= n:
        raise RejectedInputError(
            "n_components must lie in 1..N", n_components=n_components, n_samples=n
        )
    if energy is not None and not 0.0 < energy <= 1.0:
        raise RejectedInputError("energy must lie in (0, 1]", energy=energy)
    if kernel not in ("rbf", "linear"):
        raise RejectedInputError("unknown kernel", kernel=kernel)

    if kernel == "rbf":
        if bandwidth is None:
            bandwidth = float(np.mean(pdist(samples)))
        if not bandwidth > 0.0:
            raise RejectedInputError("all samples are identical; kernel PCA is degenerate")
    else:
        bandwidth = None

    centerer = KernelCenterer().fit(_gram(kernel, bandwidth, samples, samples))
    centered = centerer.transform(_gram(kernel, bandwidth, samples, samples))
    centered = 0.5 * (centered + centered.T)
    eigenvalues, eigenvectors = eigh(centered)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]

    positive = int(np.sum(eigenvalues > EIGEN_FLOOR))
    if positive == 0:
        raise RejectedInputError("centered Gram matrix is zero; samples are degenerate")
    if n_components is not None:
        if n_components > positive:
            raise RejectedInputError(
                "n_components exceeds the rank of the centered Gram matrix",
                n_components=n_components,
                rank=positive,
            )
        keep = n_components
    elif energy is not None:
        mass = np.cumsum(eigenvalues[:positive]) / np.sum(eigenvalues[:positive])
        keep = min(int(np.searchsorted(mass, energy - 1e-12)) + 1, positive)
    else:
        keep = positive

    eigenvalues = eigenvalues[:keep]
    eigenvectors = eigenvectors[:, :keep]
    features = centered @ eigenvectors / np.sqrt(eigenvalues)
    logger.debug("kpca.fit", kernel=kernel, n_samples=n, components=keep, bandwidth=bandwidth)
    return KpcaModel(
        train_samples=samples.copy(),
        kernel=kernel,
        bandwidth=bandwidth,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        centerer=centerer,
        train_features=features,
    )


def kpca_transform(model: KpcaModel, samples: np.ndarray) -> np.ndarray:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[1] != model.train_samples.shape[1]:
        raise RejectedInputError(
            "sample dimension does not match the fitted model",
            dim=samples.shape[1],
            expected=model.train_samples.shape[1],
        )
    gram = _gram(model.kernel, model.bandwidth, samples, model.train_samples)
    return model.centerer.transform(gram) @ model.eigenvectors / np.sqrt(model.eigenvalues)



def center_features(samples: np.ndarray) -> np.ndarray:
    return StandardScaler(with_std=False).fit_transform(np.asarray(samples, dtype=np.float64))


def normalize_features(samples: np.ndarray) -> np.ndarray:
    """Scale every sample to unit L2 norm; zero rows stay zero."""
    return normalize(np.asarray(samples, dtype=np.float64), norm="l2")


def preprocess_domain(
    data: DomainData,
    method: Method = "none",
    n_components: Optional[int] = None,
    energy: Optional[float] = None,
) -> DomainData:
    """Apply one preprocessing method to all samples of a domain."""
    if method == "none":
        return data
    if method == "center":
        samples = center_features(data.samples)
    elif method == "normalize":
        samples = normalize_features(data.samples)
    elif method in ("kpca", "pca"):
        kernel = "rbf" if method == "kpca" else "linear"
        samples = kpca_fit(data.samples, energy=energy, kernel=kernel).train_features
        if n_components is not None:
            # capped by the Gram rank when a domain is small
            samples = samples[:, :n_components]
    else:
        raise RejectedInputError("unknown preprocessing method", method=method)
    return DomainData(samples, data.labels, data.domain_id)
