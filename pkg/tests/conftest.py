import numpy as np
import pytest

from assoclearn.basis import CoefficientBlocks, build_basis
from assoclearn.layout import build_layout
from assoclearn.likelihood import Dataset, Family, predict_prob_matrix


def make_instance(J=(2, 3), d=None, n=40, p=4, seed=0, family=Family.MULTINOMIAL,
                  beta_scale=0.5):
    """Small synthetic problem: intercept design, random coefficients, draws."""
    rng = np.random.default_rng(seed)
    layout = build_layout(J, len(J) if d is None else d)
    basis = build_basis(layout)
    X = np.concatenate([np.ones((n, 1)), rng.standard_normal((n, p - 1))], axis=1)
    beta_star = CoefficientBlocks(layout, (p,),
                                  rng.normal(0.0, beta_scale, (layout.total_dim, p)))
    beta_star.values[layout.rows_of(()), :] = 0.0
    if family is Family.MULTINOMIAL:
        P = predict_prob_matrix(beta_star, basis, X)
        cdf = np.cumsum(P, axis=1)
        idx = np.minimum((rng.random(n)[:, None] > cdf).sum(axis=1), layout.card - 1)
        Y = np.zeros((n, layout.card))
        Y[np.arange(n), idx] = 1.0
    else:
        E = (X @ beta_star.values.T) @ basis.H.T
        Y = rng.poisson(np.exp(np.clip(E, None, 30.0))).astype(float)
    return layout, basis, Dataset(X, Y, layout), beta_star


@pytest.fixture
def small_mult():
    return make_instance()


@pytest.fixture
def small_pois():
    return make_instance(family=Family.POISSON, beta_scale=0.3)
