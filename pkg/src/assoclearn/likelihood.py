"""Negative log-likelihoods, gradients, and probability prediction.

Both response families share the linear predictor: the natural parameter
matrix built from the effect coefficients, applied to each predictor row.
The multinomial family turns each row's predictor into category
probabilities by a softmax; the Poisson family models cell counts with
exponential means.  Everything here is a pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .basis import BasisSet, CoefficientBlocks
from .layout import OVERALL, ResponseLayout

# exp argument cap: np.exp overflows just above 709
EXP_CAP = 700.0


class Family(str, Enum):
    MULTINOMIAL = "mult"
    POISSON = "pois"

    def projector(self, card: int) -> np.ndarray:
        """Identifiability projector on the natural parameter columns."""
        if self is Family.MULTINOMIAL:
            return np.eye(card) - np.full((card, card), 1.0 / card)
        return np.eye(card)


@dataclass
class Dataset:
    """Predictors and joint-category counts in vec order.

    ``Y[i]`` holds the counts of each joint category for unit i; the row sum
    is that unit's trial total.
    """

    X: np.ndarray
    Y: np.ndarray
    layout: ResponseLayout
    trials: np.ndarray = field(init=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise ValueError("X and Y must be 2-D")
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if self.Y.shape[1] != self.layout.card:
            raise ValueError(
                f"Y has {self.Y.shape[1]} columns, expected |J|={self.layout.card}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X contains non-finite entries")
        if np.any(self.Y < 0):
            raise ValueError("Y contains negative counts")
        if not np.all(self.Y == np.floor(self.Y)):
            raise ValueError("Y must contain integer counts")
        self.trials = self.Y.sum(axis=1)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def require_multinomial(self):
        if np.any(self.trials < 1):
            raise ValueError("multinomial fitting needs every row of Y to have >= 1 trial")


def linear_predictor(beta: CoefficientBlocks, basis: BasisSet, X: np.ndarray) -> np.ndarray:
    """Rows of X mapped through the natural parameter: an n x card matrix."""
    return (X @ beta.values.T) @ basis.H.T


def _logsumexp_rows(E: np.ndarray) -> np.ndarray:
    m = E.max(axis=1)
    return np.log(np.exp(E - m[:, None]).sum(axis=1)) + m


def _softmax_rows(E: np.ndarray) -> np.ndarray:
    P = np.exp(E - E.max(axis=1)[:, None])
    P /= P.sum(axis=1)[:, None]
    return P


def mult_loss(beta: CoefficientBlocks, basis: BasisSet, data: Dataset) -> float:
    """Mean multinomial negative log-likelihood (cross-entropy loss)."""
    if not np.all(np.isfinite(beta.values)):
        raise ValueError("beta contains non-finite entries")
    data.require_multinomial()
    E = linear_predictor(beta, basis, data.X)
    return float(np.mean(-(data.Y * E).sum(axis=1) + data.trials * _logsumexp_rows(E)))


def pois_loss(beta: CoefficientBlocks, basis: BasisSet, data: Dataset) -> float:
    """Mean Poisson negative log-likelihood (up to the y! constant).

    Exponent arguments are capped to keep arithmetic finite; a fit that
    reaches the cap is flagged as divergent by the solver.
    """
    if not np.all(np.isfinite(beta.values)):
        raise ValueError("beta contains non-finite entries")
    E = linear_predictor(beta, basis, data.X)
    return float(np.mean(-(data.Y * E).sum(axis=1)
                         + np.exp(np.minimum(E, EXP_CAP)).sum(axis=1)))


def loss(beta: CoefficientBlocks, basis: BasisSet, data: Dataset, family: Family) -> float:
    if family is Family.MULTINOMIAL:
        return mult_loss(beta, basis, data)
    return pois_loss(beta, basis, data)


def loss_and_grad(beta: CoefficientBlocks, basis: BasisSet, data: Dataset,
                  family: Family) -> tuple[float, np.ndarray, bool]:
    """Loss, gradient array (stacked shape), and an exp-overflow flag.

    One pass over the linear predictor serves both the value and the chain
    rule; the gradient of the overall-effect block is zeroed under the
    multinomial family, where that block is frozen (the loss is invariant
    to it).
    """
    if not np.all(np.isfinite(beta.values)):
        raise ValueError("beta contains non-finite entries")
    E = linear_predictor(beta, basis, data.X)
    overflowed = False
    if family is Family.MULTINOMIAL:
        data.require_multinomial()
        value = float(np.mean(-(data.Y * E).sum(axis=1) + data.trials * _logsumexp_rows(E)))
        M = data.trials[:, None] * _softmax_rows(E)
    else:
        overflowed = bool(np.any(E > EXP_CAP))
        M = np.exp(np.minimum(E, EXP_CAP))
        value = float(np.mean(-(data.Y * E).sum(axis=1) + M.sum(axis=1)))
    G = ((M - data.Y) @ basis.H).T @ data.X / data.n
    if family is Family.MULTINOMIAL:
        G[beta.layout.rows_of(OVERALL), :] = 0.0
    if not np.isfinite(value) or not np.all(np.isfinite(G)):
        raise FloatingPointError("non-finite loss or gradient")
    return value, G, overflowed


def grad(beta: CoefficientBlocks, basis: BasisSet, data: Dataset,
         family: Family) -> CoefficientBlocks:
    """Analytic gradient of the family loss, in coefficient-block shape."""
    _, G, _ = loss_and_grad(beta, basis, data, family)
    return CoefficientBlocks(beta.layout, beta.partition, G)


class LossEvaluator:
    """Repeated loss/gradient evaluation with per-fit precomputations.

    Produces the same values as :func:`loss_and_grad`, with the constant
    response term of the gradient computed once and scratch buffers reused
    between calls.  Not safe for concurrent use; the public functional API
    stays pure.
    """

    def __init__(self, basis: BasisSet, data: Dataset, family: Family):
        self.basis = basis
        self.data = data
        self.family = family
        if family is Family.MULTINOMIAL:
            data.require_multinomial()
        self._grad_const = (data.Y @ basis.H).T @ data.X / data.n
        self._overall_rows = basis.layout.rows_of(OVERALL)
        self._Ht = np.ascontiguousarray(basis.H.T)
        n, card = data.Y.shape
        self._T = np.empty((n, basis.H.shape[1]))
        self._E = np.empty((n, card))
        self._W = np.empty((n, card))  # exp workspace / mean matrix

    def _predictor(self, values: np.ndarray) -> np.ndarray:
        np.matmul(self.data.X, values.T, out=self._T)
        np.matmul(self._T, self._Ht, out=self._E)
        return self._E

    def _value_from(self, E: np.ndarray) -> tuple[float, bool]:
        data = self.data
        fit_term = np.einsum("ij,ij->i", data.Y, E)
        W = self._W
        if self.family is Family.MULTINOMIAL:
            m = E.max(axis=1)
            np.subtract(E, m[:, None], out=W)
            np.exp(W, out=W)
            lse = np.log(W.sum(axis=1)) + m
            return float(np.mean(data.trials * lse - fit_term)), False
        over = bool(E.max() > EXP_CAP)
        np.minimum(E, EXP_CAP, out=W)
        np.exp(W, out=W)
        return float(np.mean(W.sum(axis=1) - fit_term)), over

    def value(self, values: np.ndarray) -> tuple[float, bool]:
        return self._value_from(self._predictor(values))

    def value_and_grad(self, values: np.ndarray) -> tuple[float, np.ndarray, bool]:
        E = self._predictor(values)
        value, over = self._value_from(E)
        W = self._W  # holds exp(E - rowmax) or the Poisson means
        if self.family is Family.MULTINOMIAL:
            W *= (self.data.trials / W.sum(axis=1))[:, None]
        np.matmul(W, self.basis.H, out=self._T)
        G = self._T.T @ self.data.X / self.data.n - self._grad_const
        if self.family is Family.MULTINOMIAL:
            G[self._overall_rows, :] = 0.0
        if not np.isfinite(value) or not np.all(np.isfinite(G)):
            raise FloatingPointError("non-finite loss or gradient")
        return value, G, over


def predict_prob_matrix(beta: CoefficientBlocks, basis: BasisSet, X: np.ndarray) -> np.ndarray:
    """Category probabilities for each row of X (n x card, rows sum to 1).

    Both families predict through the softmax of the linear predictor.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return _softmax_rows(linear_predictor(beta, basis, X))


def predict_probs(beta: CoefficientBlocks, basis: BasisSet, x: np.ndarray) -> np.ndarray:
    """Category probabilities at a single predictor vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a single predictor vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite entries")
    return predict_prob_matrix(beta, basis, x[None, :])[0]


def cross_entropy(beta: CoefficientBlocks, basis: BasisSet, data: Dataset) -> float:
    """Validation criterion: mean multinomial negative log-likelihood.

    Applies to fits from either family, since both predict probabilities
    through the softmax.
    """
    return mult_loss(beta, basis, data)


def lipschitz_bound(data: Dataset) -> float:
    """Global curvature bound for the multinomial loss gradient.

    Largest eigenvalue of the predictor Gram matrix over 2n.  Rows with
    multiple trials enter with their trial counts, which reduces to the
    plain Gram bound in the single-trial case.
    """
    if data.n == 0:
        raise ValueError("empty dataset")
    X = data.X
    if np.all(data.trials == 1.0):
        Xw = X
    else:
        Xw = X * np.sqrt(data.trials)[:, None]
    # eigensolve the smaller Gram matrix
    G = Xw.T @ Xw if data.p <= data.n else Xw @ Xw.T
    lam_max = float(np.linalg.eigvalsh(G)[-1])
    return lam_max / (2.0 * data.n)
