import numpy as np
import pytest

from assoclearn.basis import CoefficientBlocks, build_basis, random_complement
from assoclearn.likelihood import (Family, lipschitz_bound, loss_and_grad,
                                   predict_prob_matrix)
from assoclearn.penalty import GroupStructure, PenaltyMode, block_sqnorms
from assoclearn.solver import (PathSpec, SolverConfig, fit, fit_path, kkt_residual,
                               lambda_max)

from conftest import make_instance


def plain_gradient_reference(layout, basis, data, family, iters=6000):
    """Slow oracle: fixed-step gradient descent on the unpenalized loss."""
    L = lipschitz_bound(data)
    vals = np.zeros((layout.total_dim, data.p))
    beta = CoefficientBlocks(layout, (data.p,), vals)
    for _ in range(iters):
        f, G, _ = loss_and_grad(beta, basis, data, family)
        beta = CoefficientBlocks(layout, (data.p,), beta.values - G / L)
    return loss_and_grad(beta, basis, data, family)[0]


@pytest.fixture(scope="module")
def mult_instance():
    return make_instance(J=(2, 3), n=60, p=4, seed=5)


def local_gs(layout, p, mode=PenaltyMode.GROUP_LASSO):
    return GroupStructure.build(layout, (1,) * p, mode)


def test_lambda_zero_matches_plain_gradient_reference(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-13, max_iter=10_000)
    res = fit(data, basis, gs, config, lam=0.0)
    ref = plain_gradient_reference(layout, basis, data, Family.MULTINOMIAL)
    assert res.objective <= ref + 1e-8
    assert abs(res.objective - ref) <= 1e-8


def test_lambda_max_zeroes_penalized_support(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    lam_hi = lambda_max(data, basis, gs, Family.MULTINOMIAL)
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-10)
    res = fit(data, basis, gs, config, lam=lam_hi * 1.0001)
    assert res.support == []
    res_lo = fit(data, basis, gs, config, lam=lam_hi * 0.8)
    assert res_lo.support != []


def test_lambda_max_halves_when_weights_double(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    doubled = GroupStructure.build(layout, gs.partition, gs.mode, weights=2 * gs.weights)
    a = lambda_max(data, basis, gs, Family.MULTINOMIAL)
    b = lambda_max(data, basis, doubled, Family.MULTINOMIAL)
    assert b == pytest.approx(a / 2.0, rel=1e-9)


def test_lambda_max_rejects_all_zero_weights(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = GroupStructure.build(layout, (data.p,), weights=np.zeros((layout.n_effects, 1)))
    with pytest.raises(ValueError):
        lambda_max(data, basis, gs, Family.MULTINOMIAL)


def test_lambda_max_poisson_with_free_overall(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    lam_hi = lambda_max(data, basis, gs, Family.POISSON)
    config = SolverConfig(family=Family.POISSON, tol=1e-10)
    res = fit(data, basis, gs, config, lam=lam_hi * 1.0001)
    # the unpenalized overall block is fit freely; everything else is zero
    assert all(k == () for k, _ in res.support)


@pytest.mark.parametrize("mode", list(PenaltyMode))
def test_kkt_residual_small_at_convergence(mult_instance, mode):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p, mode)
    lam_hi = lambda_max(data, basis, gs, Family.MULTINOMIAL)
    rng = np.random.default_rng(0)
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-14, max_iter=50_000,
                          prox_tol=1e-12)
    for lam in rng.uniform(0.05, 0.8, size=5) * lam_hi:
        res = fit(data, basis, gs, config, lam=float(lam))
        assert res.converged
        assert kkt_residual(res.beta, data, basis, gs, float(lam),
                            Family.MULTINOMIAL) <= 1e-6


def test_objective_trace_monotone(mult_instance):
    layout, basis, data, _ = mult_instance
    for mode in PenaltyMode:
        gs = local_gs(layout, data.p, mode)
        for family in Family:
            config = SolverConfig(family=family, tol=1e-10)
            res = fit(data, basis, gs, config, lam=0.05)
            tr = np.asarray(res.objective_trace)
            assert np.all(np.diff(tr) <= 1e-12 * np.maximum(1.0, np.abs(tr[:-1])))


def test_fixed_point_refit_stops_immediately(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-10)
    res = fit(data, basis, gs, config, lam=0.03)
    again = fit(data, basis, gs, config, lam=0.03, warm_start=res.beta)
    assert again.iterations <= 3
    assert np.abs(again.beta.values - res.beta.values).max() <= 1e-5


def test_backtracking_step_bounded_by_global_curvature(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    bound = lipschitz_bound(data)
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-10, backtracking=True,
                          l0=bound / 64.0, step_shrink=1.0)
    res = fit(data, basis, gs, config, lam=0.02)
    assert res.converged
    assert res.step_curvature <= config.eta * bound * (1 + 1e-12)
    assert res.n_backtracks > 0


def test_fixed_step_mode_matches_backtracking_solution(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    fixed = fit(data, basis, gs,
                SolverConfig(family=Family.MULTINOMIAL, tol=1e-12, backtracking=False),
                lam=0.05)
    adaptive = fit(data, basis, gs,
                   SolverConfig(family=Family.MULTINOMIAL, tol=1e-12), lam=0.05)
    assert fixed.objective == pytest.approx(adaptive.objective, abs=1e-9)


def test_poisson_cannot_disable_backtracking():
    with pytest.raises(ValueError):
        SolverConfig(family=Family.POISSON, backtracking=False)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(eta=1.0)
    with pytest.raises(ValueError):
        SolverConfig(lam=-1.0)
    with pytest.raises(ValueError):
        PathSpec(n_lambdas=0)
    with pytest.raises(ValueError):
        PathSpec(ratio=0.0)


def test_poisson_divergence_flagged(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    hot = CoefficientBlocks.zeros(layout, (data.p,))
    hot.values[layout.rows_of(()), 0] = 2000.0  # exp cap exceeded at the start
    config = SolverConfig(family=Family.POISSON, tol=1e-8, max_iter=50)
    res = fit(data, basis, gs, config, lam=0.1, warm_start=hot)
    assert res.diverged
    assert np.all(np.isfinite(res.beta.values))


def test_solution_invariant_to_basis_completion():
    layout, _, data, _ = make_instance(J=(2, 3, 4), n=80, p=3, seed=9, beta_scale=0.4)
    rng = np.random.default_rng(33)
    basis_a = build_basis(layout)
    basis_b = build_basis(layout, u_factory=lambda m: random_complement(m, rng))
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-13, max_iter=30_000)
    gs = local_gs(layout, data.p)
    grid = np.random.default_rng(1).standard_normal((25, data.p))
    for lam in (0.02, 0.005):
        res_a = fit(data, basis_a, gs, config, lam=lam)
        res_b = fit(data, basis_b, gs, config, lam=lam)
        Pa = predict_prob_matrix(res_a.beta, basis_a, grid)
        Pb = predict_prob_matrix(res_b.beta, basis_b, grid)
        assert np.abs(Pa - Pb).max() <= 1e-6
        na = [np.linalg.norm(res_a.beta.values[layout.rows_of(k), :]) for k in layout.effects]
        nb = [np.linalg.norm(res_b.beta.values[layout.rows_of(k), :]) for k in layout.effects]
        assert np.abs(np.array(na) - np.array(nb)).max() <= 1e-6


def test_fit_path_selects_validation_minimizer(mult_instance):
    layout, basis, data, beta_star = mult_instance
    _, _, valid, _ = make_instance(J=(2, 3), n=80, p=4, seed=77)
    gs = local_gs(layout, data.p)
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-9,
                          path=PathSpec(n_lambdas=12, ratio=1e-3))
    pr = fit_path(data, basis, gs, config, valid_data=valid)
    losses = [f.validation_loss for f in pr.fits]
    assert pr.best_index == int(np.argmin(losses))
    assert pr.best.validation_loss == min(losses)
    assert len(pr.fits) == 12
    assert pr.lambdas[0] > pr.lambdas[-1]
    # first fit sits at the path start, where no penalized block is active
    assert pr.fits[0].support == []


def test_warm_path_cheaper_than_cold(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-9,
                          path=PathSpec(n_lambdas=10, ratio=1e-2))
    pr = fit_path(data, basis, gs, config)
    warm_total = sum(f.iterations for f in pr.fits)
    cold_total = 0
    for lam in pr.lambdas:
        cold_total += fit(data, basis, gs, config, lam=float(lam)).iterations
    assert warm_total < cold_total


def test_support_detection_consistent_with_blocks(mult_instance):
    layout, basis, data, _ = mult_instance
    gs = local_gs(layout, data.p)
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-9)
    res = fit(data, basis, gs, config, lam=0.04)
    sq = block_sqnorms(res.beta.values, gs)
    expected = {(layout.effects[i], int(j)) for i, j in np.argwhere(sq > 0)}
    assert set(res.support) == expected
    assert set(res.effects_present) == {k for k, _ in expected}
