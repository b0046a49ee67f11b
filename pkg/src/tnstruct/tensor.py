"""Dense complex tensors with named legs.

Elements are stored row-major over the declared leg order.  Everything
here is a pure function of its inputs; tensors are never mutated in place.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Hashable, Sequence

import numpy as np


class TensorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DenseTensor:
    data: np.ndarray
    legs: tuple

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        legs = tuple(self.legs)
        if data.ndim != len(legs):
            raise TensorError(f"{data.ndim} axes but {len(legs)} legs")
        if len(set(legs)) != len(legs):
            raise TensorError(f"duplicate leg identifiers in {legs}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "legs", legs)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def axis(self, leg: Hashable) -> int:
        try:
            return self.legs.index(leg)
        except ValueError:
            raise TensorError(f"unknown leg {leg!r}") from None

    def dim(self, leg: Hashable) -> int:
        return self.data.shape[self.axis(leg)]

    def conj(self) -> DenseTensor:
        return DenseTensor(self.data.conj(), self.legs)

    def scale(self, alpha: complex) -> DenseTensor:
        return DenseTensor(alpha * self.data, self.legs)

    def transpose(self, legs: Sequence[Hashable]) -> DenseTensor:
        order = [self.axis(leg) for leg in legs]
        if sorted(order) != list(range(self.data.ndim)):
            raise TensorError("transpose needs every leg exactly once")
        return DenseTensor(self.data.transpose(order), legs)

    def relabel(self, mapping: dict) -> DenseTensor:
        return DenseTensor(self.data, [mapping.get(leg, leg) for leg in self.legs])

    def matrix(self, view: MatrixView) -> np.ndarray:
        view.check(self)
        t = self.transpose(list(view.row_legs) + list(view.col_legs))
        return t.data.reshape(view.shape(self))

    @classmethod
    def from_matrix(cls, m: np.ndarray, view: MatrixView, dims: dict) -> DenseTensor:
        """Inverse of :meth:`matrix`; ``dims`` maps each leg to its dimension."""
        legs = list(view.row_legs) + list(view.col_legs)
        return cls(np.asarray(m).reshape([dims[leg] for leg in legs]), legs)

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class MatrixView:
    """Bipartition of a tensor's legs into matrix rows and columns."""

    row_legs: tuple
    col_legs: tuple

    def __post_init__(self):
        object.__setattr__(self, "row_legs", tuple(self.row_legs))
        object.__setattr__(self, "col_legs", tuple(self.col_legs))

    def check(self, t: DenseTensor):
        rows, cols = set(self.row_legs), set(self.col_legs)
        if rows & cols:
            raise TensorError("row and column legs overlap")
        if rows | cols != set(t.legs) or len(self.row_legs) + len(self.col_legs) != len(t.legs):
            raise TensorError(f"view {self} is not a bipartition of legs {t.legs}")

    def shape(self, t: DenseTensor) -> tuple[int, int]:
        return (prod(t.dim(leg) for leg in self.row_legs),
                prod(t.dim(leg) for leg in self.col_legs))


def contract(a: DenseTensor, b: DenseTensor, pairs: Sequence[tuple]) -> DenseTensor:
    """Sum over paired legs; free legs of ``a`` come first, then those of ``b``."""
    pairs = list(pairs)
    la = [p[0] for p in pairs]
    lb = [p[1] for p in pairs]
    if len(set(la)) != len(la) or len(set(lb)) != len(lb):
        raise TensorError("a leg is paired more than once")
    ax_a = [a.axis(leg) for leg in la]
    ax_b = [b.axis(leg) for leg in lb]
    for x, y, (pa, pb) in zip(ax_a, ax_b, pairs):
        if a.dims[x] != b.dims[y]:
            raise TensorError(f"dimension mismatch pairing {pa!r} ({a.dims[x]}) with {pb!r} ({b.dims[y]})")
    free_a = [leg for leg in a.legs if leg not in la]
    free_b = [leg for leg in b.legs if leg not in lb]
    legs = free_a + free_b
    if len(set(legs)) != len(legs):
        raise TensorError(f"free legs collide: {legs}")
    return DenseTensor(np.tensordot(a.data, b.data, axes=(ax_a, ax_b)), legs)


def svd(t: DenseTensor, view: MatrixView, bond: Hashable = "bond"):
    """Thin SVD ``t = U diag(S) W`` across ``view``.

    U carries the row legs plus ``bond``; W carries ``bond`` plus the
    column legs.  Singular values are returned in descending order.
    """
    m = t.matrix(view)
    if not np.all(np.isfinite(m)):
        raise TensorError("svd of a tensor with non-finite elements")
    u, s, w = np.linalg.svd(m, full_matrices=False)
    dims = dict(zip(t.legs, t.dims))
    k = s.shape[0]
    U = DenseTensor(u.reshape([dims[leg] for leg in view.row_legs] + [k]), list(view.row_legs) + [bond])
    W = DenseTensor(w.reshape([k] + [dims[leg] for leg in view.col_legs]), [bond] + list(view.col_legs))
    return U, s, W


def polar(m: np.ndarray) -> np.ndarray:
    """Closest matrix with orthonormal columns (unitary polar factor)."""
    u, _, w = np.linalg.svd(m, full_matrices=False)
    return u @ w


def haar_isometry(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < cols:
        raise TensorError(f"cannot build a {rows}x{cols} isometry")
    g = (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    phases = np.where(np.abs(d) > 0, d / np.abs(d), 1.0)
    return q * phases


def random_isometry(dims: dict, view: MatrixView, rng: np.random.Generator) -> DenseTensor:
    """Haar-distributed tensor whose matrix under ``view`` has orthonormal columns."""
    rows = prod(dims[leg] for leg in view.row_legs)
    cols = prod(dims[leg] for leg in view.col_legs)
    return DenseTensor.from_matrix(haar_isometry(rows, cols, rng), view, dims)


def isometry_deviation(m: np.ndarray) -> float:
    """Largest element of ``|M^dag M - I|``."""
    g = m.conj().T @ m
    return float(np.max(np.abs(g - np.eye(g.shape[0])))) if g.size else 0.0
