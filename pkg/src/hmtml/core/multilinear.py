"""
Dense multilinear algebra.

Tensors are stored first-index-fastest (Fortran order) and unfolded with
the Kolda convention: in the mode-m matricization the remaining modes keep
their relative order and the lowest of them varies fastest along the
columns. Modes are 0-based.

These routines materialize full tensors, so they serve small problems and
act as the reference evaluation for the structured formulas in
``hmtml.core.optimizer``.
"""

from dataclasses import dataclass
from functools import reduce
from typing import Sequence, Tuple

import numpy as np

from hmtml.core.errors import RejectedInputError

MAX_DENSE_ENTRIES = 10**6


@dataclass(frozen=True)
class DenseTensor:
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim < 1:
            raise RejectedInputError("a tensor needs at least one mode")
        if any(extent < 1 for extent in data.shape):
            raise RejectedInputError("every extent must be positive", shape=data.shape)
        if data.size > MAX_DENSE_ENTRIES:
            raise RejectedInputError(
                "dense tensor too large", size=int(data.size), limit=MAX_DENSE_ENTRIES
            )
        object.__setattr__(self, "data", data)

    @classmethod
    def from_flat(cls, shape: Sequence[int], flat: np.ndarray) -> "DenseTensor":
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if int(np.prod(shape)) != flat.size:
            raise RejectedInputError(
                "buffer length does not match shape", shape=tuple(shape), length=flat.size
            )
        return cls(np.reshape(flat, tuple(shape), order="F"))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def order(self) -> int:
        return self.data.ndim

    @property
    def flat(self) -> np.ndarray:
        return np.ravel(self.data, order="F")


@dataclass(frozen=True)
class Matricization:
    mode: int
    matrix: np.ndarray


def _check_mode(tensor: DenseTensor, mode: int) -> None:
    if not 0 <= mode < tensor.order:
        raise RejectedInputError("mode out of range", mode=mode, order=tensor.order)


def matricize(tensor: DenseTensor, mode: int) -> Matricization:
    _check_mode(tensor, mode)
    moved = np.moveaxis(tensor.data, mode, 0)
    matrix = np.reshape(moved, (tensor.shape[mode], -1), order="F")
    return Matricization(mode=mode, matrix=matrix)


def dematricize(unfolded: Matricization, shape: Sequence[int]) -> DenseTensor:
    shape = tuple(int(s) for s in shape)
    mode = unfolded.mode
    if not 0 <= mode < len(shape):
        raise RejectedInputError("mode out of range", mode=mode, order=len(shape))
    rest = shape[:mode] + shape[mode + 1 :]
    expected = (shape[mode], int(np.prod(rest)) if rest else 1)
    if unfolded.matrix.shape != expected:
        raise RejectedInputError(
            "matricization does not fit the requested shape",
            matrix_shape=unfolded.matrix.shape,
            expected=expected,
        )
    folded = np.reshape(unfolded.matrix, (shape[mode],) + rest, order="F")
    return DenseTensor(np.moveaxis(folded, 0, mode))


def mode_product(tensor: DenseTensor, matrix: np.ndarray, mode: int) -> DenseTensor:
    """T x_m U: contracts mode m of T with the columns of U (J x I_m)."""
    _check_mode(tensor, mode)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != tensor.shape[mode]:
        raise RejectedInputError(
            "matrix columns must match the mode extent",
            matrix_shape=matrix.shape,
            extent=tensor.shape[mode],
            mode=mode,
        )
    product = matrix @ matricize(tensor, mode).matrix
    shape = list(tensor.shape)
    shape[mode] = matrix.shape[0]
    return dematricize(Matricization(mode, product), shape)


def multi_mode_product(tensor: DenseTensor, matrices: Sequence[np.ndarray]) -> DenseTensor:
    if len(matrices) != tensor.order:
        raise RejectedInputError(
            "need exactly one matrix per mode", n_matrices=len(matrices), order=tensor.order
        )
    return reduce(
        lambda acc, item: mode_product(acc, item[1], item[0]),
        enumerate(matrices),
        tensor,
    )


def contracted_mode_product(tensor: DenseTensor, vector: np.ndarray, mode: int) -> DenseTensor:
    """T x̄_m v: contracts mode m with a vector, dropping that mode."""
    _check_mode(tensor, mode)
    if tensor.order < 2:
        raise RejectedInputError("contraction needs a tensor of order >= 2", order=tensor.order)
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != tensor.shape[mode]:
        raise RejectedInputError(
            "vector length must match the mode extent",
            length=vector.shape[0] if vector.ndim == 1 else None,
            extent=tensor.shape[mode],
        )
    return DenseTensor(np.tensordot(tensor.data, vector, axes=([mode], [0])))


def frobenius_norm_sq(tensor: DenseTensor) -> float:
    return float(np.sum(tensor.data * tensor.data))


def identity_tensor(rank: int, order: int) -> DenseTensor:
    if rank < 1 or order < 2:
        raise RejectedInputError(
            "identity tensor needs rank >= 1 and order >= 2", rank=rank, order=order
        )
    data = np.zeros((rank,) * order)
    diagonal = np.arange(rank)
    data[(diagonal,) * order] = 1.0
    return DenseTensor(data)


def rank1_tensor(vectors: Sequence[np.ndarray]) -> DenseTensor:
    """Outer product w_1 ∘ w_2 ∘ ... ∘ w_M."""
    if len(vectors) < 2:
        raise RejectedInputError(
            "an outer product needs at least two vectors", n_vectors=len(vectors)
        )

    arrays = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if any(a.size == 0 for a in arrays):
        raise RejectedInputError("vectors must be nonempty")
    return DenseTensor(reduce(np.multiply.outer, arrays))
