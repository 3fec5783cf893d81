"""The simulation study: candidate estimators, replication, aggregation.

Eight estimators compete: six reparameterized fits crossing penalty
structure (O = hierarchical overlap on per-predictor groups, L = group
lasso on per-predictor groups, G = group lasso on intercept/rest groups)
with the response family (Mult / Pois); a separate-marginals baseline; and
the generating coefficients as an oracle.  Every estimator is tuned by
validation cross-entropy.  Within a replicate the generating coefficients,
validation set, and test set are shared across training sizes so sample
size comparisons are paired.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .basis import BasisSet, CoefficientBlocks, build_basis
from .layout import ResponseLayout, build_layout
from .likelihood import Dataset, Family, predict_prob_matrix
from .metrics import mean_hellinger, misclassification, support_metrics, test_cross_entropy
from .penalty import GroupStructure, PenaltyMode
from .simulate import SimConfig, gen_design, gen_scheme_beta, replicate_rng, sample_responses, scheme_support
from .solver import PathSpec, SolverConfig, fit_path

ESTIMATOR_NAMES = ("O-Mult", "O-Pois", "L-Mult", "L-Pois", "G-Mult", "G-Pois",
                   "Sep-Mult", "Oracle")


@dataclass
class MetricsRow:
    estimator: str
    scheme: int
    n: int
    p: int
    replicate: int
    hellinger: float
    misclass: float
    cross_entropy: float
    tpr: float
    fpr: float
    exact_support: bool
    lam: float
    converged: bool
    error: str = ""


@dataclass
class CellSummary:
    estimator: str
    scheme: int
    n: int
    p: int
    replicates: int
    failures: int
    hellinger_mean: float
    hellinger_sd: float
    hellinger_median: float
    misclass_mean: float
    misclass_sd: float
    cross_entropy_mean: float
    tpr_mean: float
    fpr_mean: float
    exact_support_rate: float


def _study_solver_config(cfg: SimConfig, family: Family) -> SolverConfig:
    return SolverConfig(family=family,
                        path=PathSpec(n_lambdas=cfg.n_lambdas, ratio=cfg.lambda_ratio),
                        tol=cfg.tol, max_iter=cfg.max_iter,
                        deterministic=cfg.deterministic)


def _reparam_spec(name: str, p: int):
    kind, fam = name.split("-")
    family = Family.MULTINOMIAL if fam == "Mult" else Family.POISSON
    if kind == "G":
        partition, mode = (1, p - 1), PenaltyMode.GROUP_LASSO
    elif kind == "L":
        partition, mode = (1,) * p, PenaltyMode.GROUP_LASSO
    elif kind == "O":
        partition, mode = (1,) * p, PenaltyMode.OVERLAPPING_HIERARCHICAL
    else:
        raise ValueError(f"unknown estimator {name}")
    return family, partition, mode


def fit_reparam_estimator(name: str, train: Dataset, valid: Dataset, basis: BasisSet,
                          cfg: SimConfig):
    """Tune one reparameterized estimator on its validation cross-entropy."""
    family, partition, mode = _reparam_spec(name, train.p)
    gs = GroupStructure.build(train.layout, partition, mode)
    if family is Family.MULTINOMIAL and not np.all(train.trials >= 1):
        keep = train.trials >= 1
        train = Dataset(train.X[keep], train.Y[keep], train.layout)
    config = _study_solver_config(cfg, family)
    path = fit_path(train, basis, gs, config, valid_data=valid)
    best = path.best
    return best.beta, best.lam, best.converged, best.effects_present


def sep_mult_baseline(train: Dataset, valid: Dataset, layout: ResponseLayout,
                      cfg: SimConfig) -> CoefficientBlocks:
    """Fit each response's marginal model separately, product for the joint.

    Each marginal fit is a penalized (per-predictor group lasso) multinomial
    regression on that response's category counts.  The product of marginal
    pmfs is exactly representable with main effects only, so the baseline
    returns coefficients in the joint layout with mains-only support.
    """
    p = train.p
    if not np.all(train.trials >= 1):
        keep = train.trials >= 1
        train = Dataset(train.X[keep], train.Y[keep], train.layout)
    joint = CoefficientBlocks.zeros(layout, (p,))
    for l in range(layout.q):
        lay_l = build_layout((layout.J[l],), 1)
        basis_l = build_basis(lay_l)
        data_l = Dataset(train.X, marginal_counts(train.Y, layout, l), lay_l)
        valid_l = Dataset(valid.X, marginal_counts(valid.Y, layout, l), lay_l)
        gs_l = GroupStructure.build(lay_l, (1,) * p, PenaltyMode.GROUP_LASSO)
        config = _study_solver_config(cfg, Family.MULTINOMIAL)
        path = fit_path(data_l, basis_l, gs_l, config, valid_data=valid_l)
        beta_l = path.best.beta
        # marginal natural parameter uses the bare complement columns; the
        # joint main-effect basis carries 1/sqrt(J_i) factors elsewhere
        scale = math.prod(math.sqrt(layout.J[i]) for i in range(layout.q) if i != l)
        joint.values[layout.rows_of((l,)), :] = beta_l.values[lay_l.rows_of((0,)), :] * scale
    return joint


def counts_array(Y: np.ndarray, layout: ResponseLayout) -> np.ndarray:
    """View joint-category count rows as per-row q-way arrays."""
    n = Y.shape[0]
    rev = tuple(reversed(layout.J))
    arr = Y.reshape((n,) + rev)
    return arr.transpose((0,) + tuple(range(layout.q, 0, -1)))


def marginal_counts(Y: np.ndarray, layout: ResponseLayout, response: int) -> np.ndarray:
    """Counts of one response's categories, summed over the others."""
    arr = counts_array(Y, layout)
    other = tuple(a + 1 for a in range(layout.q) if a != response)
    return arr.sum(axis=other)


def run_replicate(cfg: SimConfig, layout: ResponseLayout, basis: BasisSet,
                  scheme: int, rep: int) -> list[MetricsRow]:
    """All estimator rows for one (scheme, replicate) pair."""
    dgp_family = Family.POISSON if cfg.poisson_dgp else Family.MULTINOMIAL
    beta_star = gen_scheme_beta(scheme, layout, cfg.p, replicate_rng(cfg, scheme, rep, "beta"),
                                cfg.signal_low, cfg.signal_high, cfg.n_signal_predictors)
    true_effects = scheme_support(scheme)

    rng_v = replicate_rng(cfg, scheme, rep, "valid")
    X_valid = gen_design(cfg.n_valid, cfg.p, rng_v)
    Y_valid = sample_responses(X_valid, beta_star, basis, dgp_family, rng_v)
    rng_t = replicate_rng(cfg, scheme, rep, "test")
    X_test = gen_design(cfg.n_test, cfg.p, rng_t)
    Y_test = sample_responses(X_test, beta_star, basis, dgp_family, rng_t)
    if cfg.poisson_dgp:
        # cross-entropy tuning and the realized-category metrics need at
        # least one draw per row
        kv = Y_valid.sum(axis=1) >= 1
        X_valid, Y_valid = X_valid[kv], Y_valid[kv]
        kt = Y_test.sum(axis=1) >= 1
        X_test, Y_test = X_test[kt], Y_test[kt]
    valid = Dataset(X_valid, Y_valid, layout)
    test = Dataset(X_test, Y_test, layout)
    P_true = predict_prob_matrix(beta_star, basis, X_test)

    rows: list[MetricsRow] = []
    for n in cfg.n_grid:
        rng_tr = replicate_rng(cfg, scheme, rep, "train", n=n)
        X_train = gen_design(n, cfg.p, rng_tr)
        Y_train = sample_responses(X_train, beta_star, basis, dgp_family, rng_tr)
        train = Dataset(X_train, Y_train, layout)
        for name in cfg.estimators:
            try:
                rows.append(_evaluate_estimator(
                    name, cfg, layout, basis, train, valid, test, P_true,
                    beta_star, true_effects, scheme, rep, n))
            except Exception as exc:  # record, keep the study going
                rows.append(MetricsRow(
                    estimator=name, scheme=scheme, n=n, p=cfg.p, replicate=rep,
                    hellinger=float("nan"), misclass=float("nan"),
                    cross_entropy=float("nan"), tpr=float("nan"), fpr=float("nan"),
                    exact_support=False, lam=float("nan"), converged=False,
                    error=f"{type(exc).__name__}: {exc}"))
    return rows


def _evaluate_estimator(name, cfg, layout, basis, train, valid, test, P_true,
                        beta_star, true_effects, scheme, rep, n) -> MetricsRow:
    lam = float("nan")
    converged = True
    if name == "Oracle":
        beta_hat = beta_star
        effects = [k for k in true_effects]
    elif name == "Sep-Mult":
        beta_hat = sep_mult_baseline(train, valid, layout, cfg)
        effects = [k for k in layout.effects if len(k) == 1
                   and np.any(beta_hat.values[layout.rows_of(k), :] != 0)]
    else:
        beta_hat, lam, converged, effects = fit_reparam_estimator(name, train, valid, basis, cfg)
    P_hat = predict_prob_matrix(beta_hat, basis, test.X)
    tpr, fpr, exact = support_metrics(effects, true_effects, layout.effects)
    return MetricsRow(
        estimator=name, scheme=scheme, n=n, p=cfg.p, replicate=rep,
        hellinger=mean_hellinger(P_hat, P_true),
        misclass=misclassification(beta_hat, basis, test),
        cross_entropy=test_cross_entropy(beta_hat, basis, test),
        tpr=tpr, fpr=fpr, exact_support=exact, lam=lam, converged=converged)


@dataclass
class StudyResult:
    config: SimConfig
    rows: list[MetricsRow]
    summaries: list[CellSummary]

    def summary_csv(self) -> str:
        return _rows_to_csv([asdict(s) for s in self.summaries])

    def rows_csv(self) -> str:
        return _rows_to_csv([asdict(r) for r in self.rows])

    def plot_csv(self, metric: str = "hellinger") -> str:
        key = {"hellinger": "hellinger_mean", "misclass": "misclass_mean"}[metric]
        recs = [{"estimator": s.estimator, "scheme": s.scheme, "p": s.p,
                 "n": s.n, metric: getattr(s, key)} for s in self.summaries]
        return _rows_to_csv(recs)

    def to_json_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "rows": [asdict(r) for r in self.rows],
            "summaries": [asdict(s) for s in self.summaries],
        }


def _rows_to_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    if not records:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(records[0].keys()), lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
    return buf.getvalue()


def _thread_count() -> int:
    raw = os.environ.get("ASSOCLEARN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_study(cfg: SimConfig, progress=None) -> StudyResult:
    """Run all replicates of the study and aggregate per-cell metrics.

    Fixed seed plus the deterministic flag gives bitwise-identical output;
    replicates run in parallel when ASSOCLEARN_THREADS > 1 (seeding is
    per-replicate, so parallel order does not change results).
    """
    layout = build_layout(cfg.J, cfg.d)
    basis = build_basis(layout)
    tasks = [(scheme, rep) for scheme in cfg.schemes for rep in range(cfg.replicates)]
    # replicates are seeded independently and rows are sorted before
    # aggregation, so parallel execution cannot change the output
    threads = _thread_count()
    rows: list[MetricsRow] = []
    if threads > 1:
        from joblib import Parallel, delayed
        chunks = Parallel(n_jobs=threads, backend="loky")(
            delayed(run_replicate)(cfg, layout, basis, scheme, rep) for scheme, rep in tasks)
    else:
        chunks = []
        for i, (scheme, rep) in enumerate(tasks):
            chunks.append(run_replicate(cfg, layout, basis, scheme, rep))
            if progress is not None:
                progress(i + 1, len(tasks))
    for chunk in chunks:
        rows.extend(chunk)
    rows.sort(key=lambda r: (r.scheme, r.n, r.p, r.estimator, r.replicate))
    return StudyResult(config=cfg, rows=rows, summaries=_aggregate(rows))


def _aggregate(rows: list[MetricsRow]) -> list[CellSummary]:
    cells: dict[tuple, list[MetricsRow]] = {}
    for r in rows:
        cells.setdefault((r.scheme, r.n, r.p, r.estimator), []).append(r)
    out = []
    for (scheme, n, p, name), group in sorted(cells.items()):
        ok = [r for r in group if not r.error]
        hell = np.array([r.hellinger for r in ok]) if ok else np.array([np.nan])
        mis = np.array([r.misclass for r in ok]) if ok else np.array([np.nan])
        ce = np.array([r.cross_entropy for r in ok]) if ok else np.array([np.nan])
        out.append(CellSummary(
            estimator=name, scheme=scheme, n=n, p=p,
            replicates=len(group), failures=len(group) - len(ok),
            hellinger_mean=float(hell.mean()), hellinger_sd=float(hell.std(ddof=1)) if len(ok) > 1 else 0.0,
            hellinger_median=float(np.median(hell)),
            misclass_mean=float(mis.mean()), misclass_sd=float(mis.std(ddof=1)) if len(ok) > 1 else 0.0,
            cross_entropy_mean=float(ce.mean()),
            tpr_mean=float(np.mean([r.tpr for r in ok])) if ok else float("nan"),
            fpr_mean=float(np.mean([r.fpr for r in ok])) if ok else float("nan"),
            exact_support_rate=float(np.mean([r.exact_support for r in ok])) if ok else float("nan"),
        ))
    return out


def study_config_from_toml(doc: dict) -> SimConfig:
    """Build a study config from a parsed TOML document.

    ``paper_scale = true`` in the study table starts from the full-size
    defaults; explicit keys still override.
    """
    study = dict(doc.get("study", {}))
    solver = dict(doc.get("solver", {}))
    paper = bool(study.pop("paper_scale", False))
    kwargs = {}
    for key in ("J", "schemes", "n_grid", "estimators"):
        if key in study:
            kwargs[key] = tuple(study.pop(key))
    kwargs.update(study)
    for key in ("n_lambdas", "lambda_ratio", "tol", "max_iter"):
        if key in solver:
            kwargs[key] = solver[key]
    unknown = set(kwargs) - set(SimConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown study config keys: {sorted(unknown)}")
    if paper:
        return SimConfig.paper_scale(**kwargs)
    return SimConfig(**kwargs)
