from typing import Optional

import numpy as np
import structlog
from scipy.special import expit

from hmtml.core.errors import RejectedInputError
from hmtml.core.models import DomainData, PairSet

logger = structlog.get_logger(__name__)


def generate_pairs(
    data: DomainData, cap: Optional[int] = None, seed: Optional[int] = None
) -> PairSet:
    """
    Build every unordered pair (i < j) in lexicographic order.

    sign is +1 when both samples share a class, -1 otherwise. With ``cap``
    set and more pairs available, a seeded uniform subsample of ``cap``
    pairs is kept (still in lexicographic order).
    """
    n = data.n_samples
    if n < 2:
        raise RejectedInputError("pair construction needs at least two samples", n_samples=n)
    first, second = np.triu_indices(n, k=1)
    if cap is not None and first.size > cap:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(first.size, size=cap, replace=False))
        logger.debug("pairs.subsampled", domain=data.domain_id, total=first.size, kept=cap)
        first, second = first[keep], second[keep]
    diffs = data.samples[first] - data.samples[second]
    signs = np.where(data.labels[first] == data.labels[second], 1.0, -1.0)
    return PairSet(diffs=diffs, signs=signs)


def gl_loss(z, rho: float):
    """Generalized log loss g(z) = log(1 + exp(-rho z)) / rho, overflow-safe."""
    if rho <= 0:
        raise RejectedInputError("rho must be positive", rho=rho)
    return np.logaddexp(0.0, -rho * np.asarray(z, dtype=np.float64)) / rho


def _margins(factor: np.ndarray, pairs: PairSet):
    if len(pairs) == 0:
        raise RejectedInputError("empty pair set")
    if factor.ndim != 2 or factor.shape[0] != pairs.dim:
        raise RejectedInputError(
            "factor rows must match the pair dimension",
            factor_shape=factor.shape,
            pair_dim=pairs.dim,
        )
    projected = pairs.diffs @ factor
    distances = np.einsum("kr,kr->k", projected, projected)
    return projected, pairs.signs * (1.0 - distances)


def empirical_loss(factor: np.ndarray, pairs: PairSet, rho: float) -> float:
    """Mean GL-loss of y_k (1 - ||U^T delta_k||^2) over all pairs."""
    _, z = _margins(factor, pairs)
    return float(np.mean(gl_loss(z, rho)))


def loss_gradient(factor: np.ndarray, pairs: PairSet, rho: float) -> np.ndarray:
    """(1/K) sum_k 2 y_k delta_k delta_k^T U / (1 + exp(rho z_k)), without forming delta delta^T."""
    projected, z = _margins(factor, pairs)
    weights = pairs.signs * expit(-rho * z)
    return (2.0 / len(pairs)) * (pairs.diffs.T @ (weights[:, None] * projected))
