from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from hmtml.core.errors import RejectedInputError


@dataclass(frozen=True)
class DomainData:
    """Labeled samples of one domain: N x d features, labels in {1..C}."""

    samples: np.ndarray
    labels: np.ndarray
    domain_id: int = 0

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        labels = np.asarray(self.labels)
        if samples.ndim != 2:
            raise RejectedInputError("samples must be a 2-D matrix", shape=samples.shape)
        if labels.ndim != 1 or labels.shape[0] != samples.shape[0]:
            raise RejectedInputError(
                "labels must be a vector with one entry per sample",
                n_samples=samples.shape[0],
                n_labels=labels.shape[0] if labels.ndim == 1 else None,
            )
        if samples.shape[0] < 2:
            raise RejectedInputError("a domain needs at least two samples", domain=self.domain_id)
        if not np.all(np.isfinite(samples)):
            raise RejectedInputError(
                "samples contain missing or non-finite values", domain=self.domain_id
            )

        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise RejectedInputError("labels must be integer class ids", domain=self.domain_id)
            labels = labels.astype(np.int64)
        if labels.min() < 1:
            raise RejectedInputError("labels must lie in 1..C", domain=self.domain_id)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def dim(self) -> int:
        return int(self.samples.shape[1])

    def subset(self, indices: np.ndarray) -> "DomainData":
        return DomainData(self.samples[indices], self.labels[indices], self.domain_id)


@dataclass(frozen=True)
class PairSet:
    """Pair differences (K x d) and their similar/dissimilar signs (+1/-1)."""

    diffs: np.ndarray
    signs: np.ndarray

    def __len__(self) -> int:
        return int(self.signs.shape[0])

    @property
    def dim(self) -> int:
        return int(self.diffs.shape[1])


@dataclass(frozen=True)
class Codebook:
    """C x P matrix over {-1, 0, +1}; row c is the code of class c+1."""

    matrix: np.ndarray
    seed: int
    repeated_columns: bool = False

    @property
    def n_classes(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def n_tasks(self) -> int:
        return int(self.matrix.shape[1])


@dataclass(frozen=True)
class TaskWeights:
    """d x P matrix of unit-norm base classifier weights for one domain."""

    weights: np.ndarray
    domain_id: int = 0
    task_ids: Tuple[int, ...] = ()
    replaced: Tuple[int, ...] = ()  # tasks whose trained weight was degenerate
    dropped: Tuple[int, ...] = ()   # codebook columns removed in every domain

    @property
    def n_tasks(self) -> int:
        return int(self.weights.shape[1])

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True)
class Metric:
    """Mahalanobis matrix A, optionally with a factor U such that A = U U^T."""

    matrix: np.ndarray
    factor: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise RejectedInputError("metric must be a square matrix", shape=matrix.shape)
        scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * scale):
            raise RejectedInputError("metric must be symmetric")
        smallest = float(np.linalg.eigvalsh(matrix)[0]) if matrix.size else 0.0
        if smallest < -1e-10 * scale:
            raise RejectedInputError(
                "metric must be positive semidefinite", smallest_eigenvalue=smallest
            )
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls, dim: int) -> "Metric":
        eye = np.eye(dim)
        return cls(matrix=eye, factor=eye)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])


@dataclass(frozen=True)
class KpcaModel:
    """Fitted kernel PCA: training set, kernel centerer and eigenpairs."""

    train_samples: np.ndarray
    kernel: str
    bandwidth: Optional[float]
    eigenvalues: np.ndarray   # of the centered Gram matrix, descending
    eigenvectors: np.ndarray  # unit-norm columns
    centerer: Any             # fitted sklearn KernelCenterer
    train_features: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.eigenvalues.shape[0])


@dataclass
class SubproblemStats:
    steps: int = 0          # accepted projected-gradient iterations (T2)
    step_checks: int = 0    # sufficient-decrease evaluations, summed (T1)
    max_step_checks: int = 0
    step_size: float = 1.0
    objective: float = float("nan")


@dataclass
class SolverState:
    """Result of an alternating fit."""

    factors: List[np.ndarray]
    objective_trace: List[float] = field(default_factory=list)
    outer_iterations: int = 0
    inner_steps: List[List[int]] = field(default_factory=list)
    step_checks: List[List[int]] = field(default_factory=list)
    converged: bool = False
    update_order: Tuple[int, ...] = ()

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")

    def summary(self) -> Dict[str, float]:
        inner = [s for sweep in self.inner_steps for s in sweep]
        checks = [c for sweep in self.step_checks for c in sweep]
        return {
            "outer_iterations": float(self.outer_iterations),
            "max_inner_steps": float(max(inner, default=0)),
            "max_step_checks": float(max(checks, default=0)),
            "objective": self.objective,
        }
