"""Synthetic data generation for the simulation study.

Predictors are AR(1)-correlated Gaussians behind an intercept column; the
three coefficient schemes reproduce the mutual, joint, and conditional
independence patterns on four responses, with signal confined to the
intercept and a few randomly chosen predictors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSet, CoefficientBlocks
from .layout import Effect, ResponseLayout
from .likelihood import EXP_CAP, Family, linear_predictor, predict_prob_matrix

# Effect patterns on q=4 responses (0-based response labels).
_MAINS = [(0,), (1,), (2,), (3,)]
SCHEME_SUPPORTS: dict[int, list[Effect]] = {
    1: list(_MAINS),
    2: _MAINS + [(1, 2), (1, 3), (2, 3), (1, 2, 3)],
    3: _MAINS + [(1, 2), (1, 3), (2, 3), (1, 2, 3), (0, 3)],
}


def scheme_support(scheme: int) -> list[Effect]:
    if scheme not in SCHEME_SUPPORTS:
        raise ValueError(f"scheme must be 1, 2, or 3, got {scheme}")
    return list(SCHEME_SUPPORTS[scheme])


def ar1_covariance(p: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_predictors(n: int, p: int, rng: np.random.Generator, rho: float = 0.5) -> np.ndarray:
    """n i.i.d. rows from a zero-mean AR(1) Gaussian, via the Cholesky factor."""
    if n < 1 or p < 1:
        raise ValueError("need n >= 1 and p >= 1")
    C = np.linalg.cholesky(ar1_covariance(p, rho))
    return rng.standard_normal((n, p)) @ C.T


def gen_design(n: int, p: int, rng: np.random.Generator, rho: float = 0.5) -> np.ndarray:
    """Design matrix with an intercept column followed by p-1 AR(1) predictors."""
    if p < 2:
        raise ValueError("design needs an intercept plus at least one predictor")
    return np.concatenate([np.ones((n, 1)), gen_predictors(n, p - 1, rng, rho)], axis=1)


def gen_scheme_beta(scheme: int, layout: ResponseLayout, p: int, rng: np.random.Generator,
                    signal_low: float = 0.5, signal_high: float = 1.5,
                    n_signal_predictors: int = 2, overall: float = 0.0) -> CoefficientBlocks:
    """Scheme coefficients: the scheme's effect pattern, signal on the
    intercept column plus ``n_signal_predictors`` random predictor columns.

    Entry magnitudes are uniform on [signal_low, signal_high] with random
    signs.  Column 0 is the intercept; the overall-effect row gets
    ``overall`` on the intercept (0 keeps multinomial draws unchanged).
    """
    support = scheme_support(scheme)
    if layout.q != 4:
        raise ValueError("schemes are defined for q = 4 responses")
    if any(k not in layout.effects for k in support):
        raise ValueError(f"layout order d={layout.d} drops scheme-{scheme} effects")
    if not 0 <= n_signal_predictors <= p - 1:
        raise ValueError("n_signal_predictors must fit among the non-intercept columns")
    beta = CoefficientBlocks.zeros(layout, (p,))
    cols = [0] + sorted(rng.choice(np.arange(1, p), size=n_signal_predictors, replace=False).tolist())
    for k in support:
        rows = layout.rows_of(k)
        for c in cols:
            size = layout.dim_of(k)
            mags = rng.uniform(signal_low, signal_high, size=size)
            signs = rng.choice([-1.0, 1.0], size=size)
            beta.values[rows, c] = mags * signs
    beta.values[layout.rows_of(()), 0] = overall
    return beta


def sample_responses(X: np.ndarray, beta_star: CoefficientBlocks, basis: BasisSet,
                     family: Family, rng: np.random.Generator, trials: int = 1) -> np.ndarray:
    """Draw count rows from the model at each predictor row.

    Multinomial: ``trials`` draws per row from the category probabilities.
    Poisson: independent counts with the exponential cell means; rows whose
    means overflow the exp cap are rejected.
    """
    X = np.asarray(X, dtype=float)
    if family is Family.MULTINOMIAL:
        P = predict_prob_matrix(beta_star, basis, X)
        n, card = P.shape
        if trials == 1:
            cdf = np.cumsum(P, axis=1)
            u = rng.random(n)
            idx = np.minimum((u[:, None] > cdf).sum(axis=1), card - 1)
            Y = np.zeros((n, card))
            Y[np.arange(n), idx] = 1.0
            return Y
        return np.stack([rng.multinomial(trials, P[i] / P[i].sum()) for i in range(len(P))]).astype(float)
    E = linear_predictor(beta_star, basis, X)
    if np.any(E > EXP_CAP):
        raise ValueError("divergent Poisson means: linear predictor exceeds the exp cap")
    return rng.poisson(np.exp(E)).astype(float)


@dataclass(frozen=True)
class SimConfig:
    """Study configuration; defaults are the desk-scale reduction of the
    full design (which is available by raising n_test and replicates)."""

    J: tuple[int, ...] = (2, 2, 2, 3)
    d: int = 4
    schemes: tuple[int, ...] = (1, 2, 3)
    n_grid: tuple[int, ...] = (100, 500, 2000)
    p: int = 10
    n_valid: int = 1000
    n_test: int = 2000
    replicates: int = 20
    seed: int = 20240901
    signal_low: float = 0.5
    signal_high: float = 1.5
    n_signal_predictors: int = 2
    estimators: tuple[str, ...] = ("O-Mult", "O-Pois", "L-Mult", "L-Pois",
                                   "G-Mult", "G-Pois", "Sep-Mult", "Oracle")
    poisson_dgp: bool = False
    # solver knobs for study fits
    n_lambdas: int = 30
    lambda_ratio: float = 1e-3
    tol: float = 1e-7
    max_iter: int = 2000
    deterministic: bool = True

    def __post_init__(self):
        if not self.schemes or not self.n_grid:
            raise ValueError("schemes and n_grid must be nonempty")
        if any(s not in (1, 2, 3) for s in self.schemes):
            raise ValueError(f"unknown scheme in {self.schemes}")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")

    @classmethod
    def paper_scale(cls, **overrides) -> "SimConfig":
        """Full-size study: 100 replicates, 10000 test points, the wide
        sample-size grid, and the library-default solver settings."""
        base = dict(n_grid=(100, 300, 500, 1000, 2000), n_test=10_000,
                    replicates=100, n_lambdas=50, lambda_ratio=1e-4,
                    tol=1e-8, max_iter=5000)
        base.update(overrides)
        return cls(**base)


def replicate_rng(config: SimConfig, scheme: int, rep: int, purpose: str,
                  n: int | None = None) -> np.random.Generator:
    """Independent, reproducible stream per (scheme, replicate, purpose)."""
    digest = [config.seed, scheme, rep, sum(map(ord, purpose))]
    if n is not None:
        digest.append(n)
    return np.random.default_rng(np.random.SeedSequence(digest))
