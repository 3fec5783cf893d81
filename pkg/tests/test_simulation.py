import numpy as np
import pytest

from assoclearn.basis import CoefficientBlocks, build_basis
from assoclearn.interpret import SupportPattern, build_report, check_hierarchy
from assoclearn.layout import build_layout
from assoclearn.likelihood import Dataset, Family, predict_prob_matrix, predict_probs
from assoclearn.metrics import hellinger, mean_hellinger, misclassification, support_metrics
from assoclearn.simulate import (SimConfig, ar1_covariance, gen_design, gen_predictors,
                                 gen_scheme_beta, replicate_rng, sample_responses,
                                 scheme_support)
from assoclearn.study import (counts_array, marginal_counts, run_study, sep_mult_baseline,
                              study_config_from_toml)


@pytest.fixture(scope="module")
def layout4():
    return build_layout((2, 2, 2, 3), 4)


@pytest.fixture(scope="module")
def basis4(layout4):
    return build_basis(layout4)


def test_ar1_covariance_unit_diagonal():
    S = ar1_covariance(6)
    assert np.all(np.diag(S) == 1.0)
    assert S[0, 3] == 0.5 ** 3


def test_gen_predictors_covariance_monte_carlo():
    rng = np.random.default_rng(0)
    X = gen_predictors(100_000, 5, rng)
    emp = np.cov(X.T)
    assert np.abs(emp - ar1_covariance(5)).max() <= 0.02


def test_gen_predictors_reproducible():
    a = gen_predictors(50, 4, np.random.default_rng(42))
    b = gen_predictors(50, 4, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_gen_design_has_intercept():
    X = gen_design(30, 6, np.random.default_rng(1))
    assert X.shape == (30, 6)
    assert np.all(X[:, 0] == 1.0)


@pytest.mark.parametrize("scheme,extra", [
    (1, set()),
    (2, {(1, 2), (1, 3), (2, 3), (1, 2, 3)}),
    (3, {(1, 2), (1, 3), (2, 3), (1, 2, 3), (0, 3)}),
])
def test_scheme_supports(scheme, extra):
    assert set(scheme_support(scheme)) == {(0,), (1,), (2,), (3,)} | extra
    ok, _ = check_hierarchy(scheme_support(scheme))
    assert ok


def test_scheme_support_rejects_unknown():
    with pytest.raises(ValueError):
        scheme_support(4)


def test_gen_scheme_beta_structure(layout4):
    rng = np.random.default_rng(7)
    beta = gen_scheme_beta(2, layout4, 10, rng)
    nz_cols = np.flatnonzero(np.any(beta.values != 0, axis=0))
    assert len(nz_cols) == 3 and nz_cols[0] == 0  # intercept + two predictors
    present = {k for k in layout4.effects
               if np.any(beta.values[layout4.rows_of(k), :] != 0)}
    assert present == set(scheme_support(2))
    mags = np.abs(beta.values[beta.values != 0])
    assert mags.min() >= 0.5 and mags.max() <= 1.5


def test_gen_scheme_beta_drives_interpreter(layout4):
    rng = np.random.default_rng(8)
    for scheme, partition in [(1, [(0,), (1,), (2,), (3,)]), (2, [(0,), (1, 2, 3)])]:
        beta = gen_scheme_beta(scheme, layout4, 6, rng)
        support = SupportPattern(q=4, effects_present=frozenset(
            k for k in layout4.effects if np.any(beta.values[layout4.rows_of(k), :] != 0)))
        assert build_report(support).partition == partition


def test_sample_responses_single_trial_rows(layout4, basis4):
    rng = np.random.default_rng(9)
    beta = gen_scheme_beta(1, layout4, 5, rng)
    X = gen_design(200, 5, rng)
    Y = sample_responses(X, beta, basis4, Family.MULTINOMIAL, rng)
    assert np.all(Y.sum(axis=1) == 1.0)
    assert np.all((Y == 0) | (Y == 1))


def test_sample_responses_frequencies_match_probabilities(layout4, basis4):
    rng = np.random.default_rng(10)
    beta = gen_scheme_beta(2, layout4, 4, rng)
    x = np.array([1.0, 0.3, -0.5, 0.8])
    X = np.tile(x, (100_000, 1))
    Y = sample_responses(X, beta, basis4, Family.MULTINOMIAL, rng)
    freq = Y.mean(axis=0)
    pi = predict_probs(beta, basis4, x)
    assert np.abs(freq - pi).max() <= 0.01


def test_sample_responses_zero_beta_uniform(layout4, basis4):
    rng = np.random.default_rng(11)
    zero = CoefficientBlocks.zeros(layout4, (3,))
    X = gen_design(60_000, 3, rng)
    Y = sample_responses(X, zero, basis4, Family.MULTINOMIAL, rng)
    assert np.abs(Y.mean(axis=0) - 1.0 / layout4.card).max() <= 0.01


def test_sample_responses_poisson_counts_and_divergence(layout4, basis4):
    rng = np.random.default_rng(12)
    beta = CoefficientBlocks.zeros(layout4, (2,))
    X = gen_design(50, 2, rng)
    Y = sample_responses(X, beta, basis4, Family.POISSON, rng)
    assert np.all(Y >= 0) and np.all(Y == np.floor(Y))
    hot = CoefficientBlocks.zeros(layout4, (2,))
    hot.values[0, 0] = 1e6
    with pytest.raises(ValueError):
        sample_responses(X, hot, basis4, Family.POISSON, rng)


def test_hellinger_examples():
    assert hellinger(np.array([0.2, 0.8]), np.array([0.2, 0.8])) == 0.0
    assert hellinger(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)
    # closed form: uniform on 2 vs point mass
    expected = np.sqrt(1.0 - 1.0 / np.sqrt(2.0))
    assert hellinger(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == pytest.approx(expected)
    assert expected == pytest.approx(0.5412, abs=2e-4)
    with pytest.raises(ValueError):
        hellinger(np.ones(3) / 3, np.ones(4) / 4)


def test_mean_hellinger_rowwise():
    P = np.array([[0.5, 0.5], [1.0, 0.0]])
    Q = np.array([[0.5, 0.5], [0.0, 1.0]])
    assert mean_hellinger(P, Q) == pytest.approx(0.5)


def test_misclassification_oracle_vs_realized(layout4, basis4):
    rng = np.random.default_rng(13)
    beta = gen_scheme_beta(3, layout4, 4, rng)
    X = gen_design(4000, 4, rng)
    Y = sample_responses(X, beta, basis4, Family.MULTINOMIAL, rng)
    test = Dataset(X, Y, layout4)
    rate = misclassification(beta, basis4, test)
    P = predict_prob_matrix(beta, basis4, X)
    bayes = float(np.mean(1.0 - P.max(axis=1)))
    assert abs(rate - bayes) <= 0.03  # oracle misclassification sits at Bayes error


def test_misclassification_uniform_truth(layout4, basis4):
    rng = np.random.default_rng(14)
    zero = CoefficientBlocks.zeros(layout4, (2,))
    X = gen_design(50_000, 2, rng)
    Y = sample_responses(X, zero, basis4, Family.MULTINOMIAL, rng)
    rate = misclassification(zero, basis4, Dataset(X, Y, layout4))
    assert abs(rate - (1.0 - 1.0 / layout4.card)) <= 0.01


def test_support_metrics():
    all_effects = build_layout((2, 2, 2), 3).effects
    truth = [(0,), (1,), (0, 1)]
    tpr, fpr, exact = support_metrics([(0,), (1,), (0, 1)], truth, all_effects)
    assert (tpr, fpr, exact) == (1.0, 0.0, True)
    tpr, fpr, exact = support_metrics([(0,), (2,)], truth, all_effects)
    assert tpr == pytest.approx(1 / 3)
    assert fpr == pytest.approx(1 / 4)  # one of four non-true candidates
    assert not exact


def test_counts_array_and_marginals(layout4):
    rng = np.random.default_rng(15)
    Y = rng.integers(0, 5, size=(7, layout4.card)).astype(float)
    arr = counts_array(Y, layout4)
    # oracle: inverse vectorization row by row
    from assoclearn.layout import inv_vec_J
    for i in range(7):
        assert np.array_equal(arr[i], inv_vec_J(Y[i], layout4))
    marg = marginal_counts(Y, layout4, 3)
    assert marg.shape == (7, 3)
    assert np.array_equal(marg.sum(axis=1), Y.sum(axis=1))


def test_sep_mult_factorizes_and_normalizes(layout4, basis4):
    cfg = SimConfig(p=5, n_lambdas=6, lambda_ratio=1e-2, tol=1e-6)
    rng = replicate_rng(cfg, 1, 0, "beta")
    beta_star = gen_scheme_beta(1, layout4, 5, rng)
    rngd = replicate_rng(cfg, 1, 0, "data")
    X = gen_design(400, 5, rngd)
    Y = sample_responses(X, beta_star, basis4, Family.MULTINOMIAL, rngd)
    Xv = gen_design(200, 5, rngd)
    Yv = sample_responses(Xv, beta_star, basis4, Family.MULTINOMIAL, rngd)
    joint = sep_mult_baseline(Dataset(X, Y, layout4), Dataset(Xv, Yv, layout4), layout4, cfg)
    # mains-only coefficients: the joint pmf factorizes across responses
    present = {k for k in layout4.effects
               if np.any(joint.values[layout4.rows_of(k), :] != 0)}
    assert all(len(k) <= 1 for k in present)
    P = predict_prob_matrix(joint, basis4, X[:20])
    assert np.abs(P.sum(axis=1) - 1.0).max() <= 1e-12
    from assoclearn.interpret import verify_factorization
    for i in range(5):
        dev = verify_factorization(joint, basis4, X[i], [(0,), (1,), (2,), (3,)])
        assert dev <= 1e-10


def test_sep_mult_matches_per_response_marginals(layout4, basis4):
    # the joint prediction's marginals equal the separately fitted marginals
    cfg = SimConfig(p=4, n_lambdas=5, lambda_ratio=1e-2, tol=1e-6)
    rng = replicate_rng(cfg, 1, 3, "beta")
    beta_star = gen_scheme_beta(1, layout4, 4, rng)
    rngd = replicate_rng(cfg, 1, 3, "data")
    X = gen_design(300, 4, rngd)
    Y = sample_responses(X, beta_star, basis4, Family.MULTINOMIAL, rngd)
    Xv = gen_design(150, 4, rngd)
    Yv = sample_responses(Xv, beta_star, basis4, Family.MULTINOMIAL, rngd)
    joint = sep_mult_baseline(Dataset(X, Y, layout4), Dataset(Xv, Yv, layout4), layout4, cfg)
    P = predict_prob_matrix(joint, basis4, X[:10])
    arr = counts_array(P, layout4)
    for l in range(4):
        other = tuple(a + 1 for a in range(4) if a != l)
        marg = arr.sum(axis=other)
        assert np.abs(marg.sum(axis=1) - 1.0).max() <= 1e-12


def test_run_study_smoke_and_determinism():
    cfg = SimConfig(schemes=(1,), n_grid=(60,), p=5, n_valid=120, n_test=150,
                    replicates=2, estimators=("L-Mult", "Sep-Mult", "Oracle"),
                    n_lambdas=5, lambda_ratio=1e-2, tol=1e-6, seed=99)
    res1 = run_study(cfg)
    res2 = run_study(cfg)
    assert res1.summary_csv() == res2.summary_csv()
    assert res1.rows_csv() == res2.rows_csv()
    oracle_rows = [r for r in res1.rows if r.estimator == "Oracle"]
    assert oracle_rows and all(r.hellinger == 0.0 for r in oracle_rows)
    assert all(not r.error for r in res1.rows)
    assert len(res1.rows) == 2 * 3  # replicates x estimators
    summaries = {s.estimator for s in res1.summaries}
    assert summaries == {"L-Mult", "Sep-Mult", "Oracle"}


def test_poisson_dgp_direction():
    # under count-generating data the Poisson-likelihood fits edge out the
    # multinomial ones; a directional check only
    cfg = SimConfig(schemes=(2,), n_grid=(400,), p=6, replicates=3, n_valid=300,
                    n_test=400, poisson_dgp=True,
                    estimators=("L-Mult", "L-Pois", "G-Mult", "G-Pois"),
                    n_lambdas=8, lambda_ratio=1e-2, tol=1e-6,
                    signal_low=0.3, signal_high=0.8, seed=404)
    res = run_study(cfg)
    cells = {s.estimator: s.hellinger_mean for s in res.summaries}
    assert cells["L-Pois"] < cells["L-Mult"]
    assert cells["G-Pois"] < cells["G-Mult"]
    assert sum(s.failures for s in res.summaries) == 0


def test_study_config_from_toml():
    doc = {"study": {"schemes": [2], "n_grid": [100], "p": 6, "replicates": 3,
                     "seed": 5, "estimators": ["G-Mult"]},
           "solver": {"n_lambdas": 7, "tol": 1e-6}}
    cfg = study_config_from_toml(doc)
    assert cfg.schemes == (2,) and cfg.n_grid == (100,) and cfg.p == 6
    assert cfg.n_lambdas == 7 and cfg.tol == 1e-6
    with pytest.raises(ValueError):
        study_config_from_toml({"study": {"bogus": 1}})


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(schemes=())
    with pytest.raises(ValueError):
        SimConfig(schemes=(5,))
    with pytest.raises(ValueError):
        SimConfig(replicates=0)


def test_replicate_rng_streams_differ():
    cfg = SimConfig()
    a = replicate_rng(cfg, 1, 0, "train", n=100).standard_normal(4)
    b = replicate_rng(cfg, 1, 1, "train", n=100).standard_normal(4)
    c = replicate_rng(cfg, 1, 0, "train", n=100).standard_normal(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)
