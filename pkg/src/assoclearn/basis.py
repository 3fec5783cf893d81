"""Kronecker-structured orthonormal bases for joint-effect subspaces.

Each effect k gets a basis matrix built as a Kronecker product over
responses: an orthonormal completion of the constant direction for
responses in k, the normalized ones vector otherwise.  The spans of the
effect bases decompose the joint-category space into orthogonal subspaces,
one per effect.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .layout import Effect, ResponseLayout


def helmert_complement(m: int) -> np.ndarray:
    """The m x (m-1) Helmert-style orthonormal complement of the ones vector.

    Column j (1-based) is (1, ..., 1, -j, 0, ..., 0) / sqrt(j*(j+1)) with j
    leading ones, so that prepending the column ones/sqrt(m) yields an
    orthogonal matrix of order m.
    """
    if m < 2:
        raise ValueError(f"need m >= 2, got {m}")
    U = np.zeros((m, m - 1))
    for j in range(1, m):
        U[:j, j - 1] = 1.0
        U[j, j - 1] = -j
        U[:, j - 1] /= np.sqrt(j * (j + 1.0))
    return U


def random_complement(m: int, rng: np.random.Generator) -> np.ndarray:
    """A random orthonormal complement of the ones vector.

    Used to exercise the invariance of the reparameterized penalty under the
    choice of completion.
    """
    if m < 2:
        raise ValueError(f"need m >= 2, got {m}")
    A = np.concatenate([np.full((m, 1), 1.0 / np.sqrt(m)), rng.standard_normal((m, m - 1))], axis=1)
    Q, _ = np.linalg.qr(A)
    # QR may flip the first column's sign; the remaining columns span the
    # complement of the ones direction either way.
    return Q[:, 1:]


@dataclass(frozen=True)
class BasisSet:
    """All effect basis matrices for a layout, plus their concatenation."""

    layout: ResponseLayout
    blocks: tuple[np.ndarray, ...]  # aligned with layout.effects
    H: np.ndarray                   # card x total_dim

    def block_of(self, effect: Effect) -> np.ndarray:
        return self.blocks[self.layout.index_of(effect)]


def basis_matrix(layout: ResponseLayout, effect: Effect, u_factory=helmert_complement) -> np.ndarray:
    """Basis matrix of one effect, a Kronecker product over responses.

    Factor order puts the last response outermost so that row order matches
    the vec flattening (first response index varying fastest).
    """
    effect = tuple(sorted(effect))
    layout.index_of(effect)  # validates membership
    factors = []
    for i in reversed(range(layout.q)):
        m = layout.J[i]
        if i in effect:
            factors.append(u_factory(m))
        else:
            factors.append(np.full((m, 1), 1.0 / np.sqrt(m)))
    return reduce(np.kron, factors)


def build_basis(layout: ResponseLayout, u_factory=helmert_complement) -> BasisSet:
    blocks = tuple(basis_matrix(layout, k, u_factory) for k in layout.effects)
    H = np.concatenate(blocks, axis=1)
    return BasisSet(layout=layout, blocks=blocks, H=H)


def corner_basis_matrix(layout: ResponseLayout, effect: Effect, variant: str = "drop-first") -> np.ndarray:
    """Corner-constraint basis block (non-orthonormal), for contrast only.

    Uses raw ones vectors and identity-column selections: ``drop-first``
    keeps category columns 2..m, ``drop-last`` keeps 1..m-1.  Penalties
    built on these coordinates depend on which category is dropped, unlike
    the orthonormal construction.
    """
    effect = tuple(sorted(effect))
    layout.index_of(effect)
    factors = []
    for i in reversed(range(layout.q)):
        m = layout.J[i]
        if i in effect:
            eye = np.eye(m)
            factors.append(eye[:, 1:] if variant == "drop-first" else eye[:, : m - 1])
        else:
            factors.append(np.ones((m, 1)))
    return reduce(np.kron, factors)


@dataclass
class CoefficientBlocks:
    """Stacked coefficient matrix with effect-row and predictor-column blocks.

    ``values`` has one row block per effect (layout order) and one column
    block per entry of ``partition``; the two views are bijective.
    """

    layout: ResponseLayout
    partition: tuple[int, ...]
    values: np.ndarray  # total_dim x p

    def __post_init__(self):
        self.partition = tuple(int(s) for s in self.partition)
        if any(s <= 0 for s in self.partition):
            raise ValueError(f"partition sizes must be positive, got {self.partition}")
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.layout.total_dim, self.p)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape}, expected {expected}")

    @property
    def p(self) -> int:
        return sum(self.partition)

    @property
    def t(self) -> int:
        return len(self.partition)

    def col_offsets(self) -> list[int]:
        offs = [0]
        for s in self.partition:
            offs.append(offs[-1] + s)
        return offs

    def cols_of(self, j: int) -> slice:
        offs = self.col_offsets()
        return slice(offs[j], offs[j + 1])

    def block(self, effect: Effect, j: int) -> np.ndarray:
        """View of the (effect, predictor-block) coefficient block."""
        return self.values[self.layout.rows_of(effect), self.cols_of(j)]

    def effect_rows(self, effect: Effect) -> np.ndarray:
        return self.values[self.layout.rows_of(effect), :]

    def copy(self) -> "CoefficientBlocks":
        return CoefficientBlocks(self.layout, self.partition, self.values.copy())

    @classmethod
    def zeros(cls, layout: ResponseLayout, partition) -> "CoefficientBlocks":
        partition = tuple(int(s) for s in partition)
        return cls(layout, partition, np.zeros((layout.total_dim, sum(partition))))


def theta_from_beta(basis: BasisSet, beta: CoefficientBlocks) -> np.ndarray:
    """Map block coefficients to the card x p natural parameter matrix."""
    if beta.layout is not basis.layout and beta.layout != basis.layout:
        raise ValueError("beta layout does not match basis layout")
    return basis.H @ beta.values


def beta_from_theta(basis: BasisSet, theta: np.ndarray, partition=None) -> CoefficientBlocks:
    """Project a natural parameter matrix onto the effect coordinates.

    Exact inverse of :func:`theta_from_beta` when the layout retains all
    orders (d = q); otherwise returns the orthogonal projection coefficients.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape[0] != basis.layout.card:
        raise ValueError(f"theta has {theta.shape[0]} rows, expected {basis.layout.card}")
    if partition is None:
        partition = (theta.shape[1],)
    return CoefficientBlocks(basis.layout, tuple(partition), basis.H.T @ theta)
