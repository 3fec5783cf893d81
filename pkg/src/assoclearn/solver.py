"""Accelerated proximal gradient solver, regularization paths, tuning.

Each iteration majorizes the smooth loss at an extrapolated point by a
quadratic with curvature L and minimizes the majorant plus penalty in
closed form (the prox step).  By default the curvature adapts in both
directions: relaxed a little every iteration, grown by backtracking until
the majorization check passes.  The multinomial family can instead run on
its fixed global curvature bound (``backtracking=False``); the Poisson
loss has no global bound, so it always backtracks.  Momentum restarts
whenever the objective would increase, which keeps the trace monotone.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisSet, CoefficientBlocks
from .layout import OVERALL, Effect
from .likelihood import (Dataset, Family, LossEvaluator, cross_entropy, lipschitz_bound,
                         loss_and_grad)
from .penalty import GroupStructure, PenaltyMode, block_sqnorms, omega, prox


@dataclass(frozen=True)
class PathSpec:
    """Log-spaced penalty grid from the data-driven maximum downward."""
    n_lambdas: int = 50
    ratio: float = 1e-4

    def __post_init__(self):
        if self.n_lambdas < 1:
            raise ValueError("path needs at least one lambda")
        if not 0 < self.ratio <= 1:
            raise ValueError("ratio must be in (0, 1]")


@dataclass(frozen=True)
class SolverConfig:
    family: Family = Family.MULTINOMIAL
    lam: float | None = None
    path: PathSpec = field(default_factory=PathSpec)
    tol: float = 1e-8
    max_iter: int = 5000
    eta: float = 2.0
    step_shrink: float = 0.9   # trial-step relaxation between iterations
    acceleration: bool = True
    restart_on_increase: bool = True
    backtracking: bool | None = None  # None: adaptive for both families
    l0: float | None = None           # override the initial curvature
    prox_tol: float = 1e-10
    prox_max_passes: int = 10_000
    deterministic: bool = True
    seed: int | None = None

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.eta <= 1:
            raise ValueError("backtracking factor must exceed 1")
        if not 0 < self.step_shrink <= 1:
            raise ValueError("step_shrink must be in (0, 1]")
        if self.backtracking is False and self.family is Family.POISSON:
            raise ValueError("the Poisson loss has no global curvature bound; "
                             "backtracking cannot be disabled")

    @property
    def uses_backtracking(self) -> bool:
        if self.backtracking is not None:
            return self.backtracking
        return True


@dataclass
class FitResult:
    beta: CoefficientBlocks
    lam: float
    objective_trace: list[float]
    iterations: int
    converged: bool
    support: list[tuple[Effect, int]]
    effects_present: list[Effect]
    family: Family
    runtime: float
    step_curvature: float
    n_backtracks: int = 0
    diverged: bool = False
    prox_converged: bool = True
    validation_loss: float | None = None

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _support_of(beta: CoefficientBlocks, gs: GroupStructure):
    sq = block_sqnorms(beta.values, gs)
    support = [(gs.layout.effects[i], int(j)) for i, j in np.argwhere(sq > 0.0)]
    effects = sorted({k for k, _ in support}, key=lambda k: (len(k), k))
    return support, effects


def _initial_curvature(data: Dataset, config: SolverConfig) -> float:
    if config.l0 is not None:
        return config.l0
    if config.family is Family.MULTINOMIAL:
        return max(lipschitz_bound(data), 1e-12)
    return 1.0


def fit(data: Dataset, basis: BasisSet, gs: GroupStructure, config: SolverConfig,
        lam: float | None = None, warm_start: CoefficientBlocks | None = None) -> FitResult:
    """Solve one penalized fit at a single penalty level.

    ``lam`` overrides ``config.lam``; ``warm_start`` seeds the iterate (its
    values are copied).  Termination: relative objective change at or below
    ``config.tol`` on 3 consecutive iterations, or ``config.max_iter``.
    """
    lam = config.lam if lam is None else float(lam)
    if lam is None:
        raise ValueError("no lambda given (set config.lam or pass lam)")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    family = config.family
    if family is Family.MULTINOMIAL:
        data.require_multinomial()
    t0 = time.perf_counter()

    if warm_start is not None:
        vals = warm_start.values.copy()
    else:
        vals = np.zeros((gs.layout.total_dim, gs.p))
    beta = CoefficientBlocks(gs.layout, gs.partition, vals)
    if family is Family.MULTINOMIAL:
        # frozen block: the loss is invariant to it, keep the 0 representative
        beta.values[gs.layout.rows_of(OVERALL), :] = 0.0
    beta_prev = beta.copy()

    L = _initial_curvature(data, config)
    use_bt = config.uses_backtracking
    evaluator = LossEvaluator(basis, data, family)

    f_beta, over0 = evaluator.value(beta.values)
    obj = f_beta + lam * omega(beta, gs)
    trace = [obj]
    t_mom = 1.0
    consec = 0
    n_bt = 0
    converged = False
    diverged = over0
    prox_ok = True
    iterations = 0

    dual_state = None
    if gs.mode is PenaltyMode.OVERLAPPING_HIERARCHICAL:
        dual_state = np.zeros((gs.member_rows.size, gs.p))

    def prox_step(y_blocks, G, L_try):
        z = CoefficientBlocks(gs.layout, gs.partition, y_blocks.values - G / L_try)
        cand, info = prox(z, gs.thresholds(lam, L_try), gs,
                          tol=config.prox_tol, max_passes=config.prox_max_passes,
                          dual_state=dual_state)
        return cand, info

    def attempt(start_blocks):
        """One MM-validated prox step from ``start_blocks``; adjusts L."""
        nonlocal L, n_bt, prox_ok, diverged
        f_y, G, over = evaluator.value_and_grad(start_blocks.values)
        if over:
            # capped exponentials make the gradient meaningless: report the
            # last finite iterate instead of stepping on garbage
            diverged = True
            return start_blocks, f_y
        if use_bt:
            # relax the trial step so the curvature can track local geometry
            L = max(L * config.step_shrink, 1e-12)
        while True:
            cand, info = prox_step(start_blocks, G, L)
            if info is not None:
                prox_ok = prox_ok and info.converged
            f_c, over_c = evaluator.value(cand.values)
            if not use_bt:
                break
            diff = cand.values - start_blocks.values
            quad = f_y + float(np.sum(G * diff)) + 0.5 * L * float(np.sum(diff * diff))
            if f_c <= quad + 1e-12 * max(1.0, abs(quad)):
                break
            L *= config.eta
            n_bt += 1
        diverged = diverged or over_c
        return cand, f_c

    for it in range(1, config.max_iter + 1):
        iterations = it
        if config.acceleration and it > 1:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
            w = (t_mom - 1.0) / t_next
            y = CoefficientBlocks(gs.layout, gs.partition,
                                  beta.values + w * (beta.values - beta_prev.values))
        else:
            t_next = 1.0
            y = beta
        cand, f_c = attempt(y)
        obj_c = f_c + lam * omega(cand, gs)

        if (obj_c > obj + 1e-12 * max(1.0, abs(obj))
                and config.restart_on_increase and y is not beta):
            # extrapolation overshot: restart momentum, step from the iterate
            t_next = 1.0
            cand, f_c = attempt(beta)
            obj_c = f_c + lam * omega(cand, gs)

        beta_prev = beta
        beta = cand
        t_mom = t_next
        rel = abs(obj - obj_c) / max(1.0, abs(obj))
        obj = obj_c
        trace.append(obj)
        if diverged:
            break
        if rel <= config.tol:
            consec += 1
            if consec >= 3:
                converged = True
                break
        else:
            consec = 0

    support, effects = _support_of(beta, gs)
    return FitResult(beta=beta, lam=lam, objective_trace=trace, iterations=iterations,
                     converged=converged, support=support, effects_present=effects,
                     family=family, runtime=time.perf_counter() - t0,
                     step_curvature=L, n_backtracks=n_bt, diverged=diverged,
                     prox_converged=prox_ok)


def lambda_max(data: Dataset, basis: BasisSet, gs: GroupStructure, family: Family,
               config: SolverConfig | None = None) -> float:
    """Smallest penalty level at which every penalized block stays zero.

    Unpenalized blocks are fit first (holding penalized blocks at zero) by
    running the solver at an effectively infinite penalty; the bound is the
    largest weighted gradient block norm at that restricted optimum.  In
    hierarchical mode the same bound is a valid, conservative path start.
    """
    if not np.any(gs.weights > 0):
        raise ValueError("lambda_max undefined: all group weights are zero")
    if config is None:
        config = SolverConfig(family=family, tol=1e-10, max_iter=2000)
    else:
        config = replace(config, family=family, lam=None)
    zero = CoefficientBlocks.zeros(gs.layout, gs.partition)
    _, G0, _ = loss_and_grad(zero, basis, data, family)
    w_min = float(gs.weights[gs.weights > 0].min())
    lam_huge = 1e12 * (float(np.linalg.norm(G0)) / w_min + 1.0)
    base = fit(data, basis, gs, config, lam=lam_huge)
    _, G, _ = loss_and_grad(base.beta, basis, data, family)
    sq = block_sqnorms(np.ascontiguousarray(G), gs)
    ratios = np.where(gs.weights > 0, np.sqrt(sq) / np.where(gs.weights > 0, gs.weights, 1.0), 0.0)
    return float(ratios.max())


def kkt_residual(beta: CoefficientBlocks, data: Dataset, basis: BasisSet,
                 gs: GroupStructure, lam: float, family: Family) -> float:
    """Optimality residual of a candidate solution.

    Group-lasso mode checks the blockwise subgradient inclusion of the
    negative gradient; hierarchical mode measures the proximal fixed-point
    residual, which vanishes exactly at the minimizer.
    """
    _, G, _ = loss_and_grad(beta, basis, data, family)
    if gs.mode is PenaltyMode.GROUP_LASSO:
        worst = 0.0
        for i, k in enumerate(gs.layout.effects):
            for j in range(gs.t):
                rows = slice(gs.row_lo[i], gs.row_hi[i])
                cols = slice(gs.col_lo[j], gs.col_hi[j])
                Gb = G[rows, cols]
                w = gs.weights[i, j]
                if w == 0.0:
                    if family is Family.MULTINOMIAL and k == OVERALL:
                        continue  # frozen, not a free variable
                    worst = max(worst, float(np.linalg.norm(Gb)))
                    continue
                Bb = beta.values[rows, cols]
                nrm = np.linalg.norm(Bb)
                if nrm > 0:
                    worst = max(worst, float(np.linalg.norm(Gb + lam * w * Bb / nrm)))
                else:
                    worst = max(worst, max(0.0, float(np.linalg.norm(Gb)) - lam * w))
        return worst
    L = max(lipschitz_bound(data), 1e-12) if family is Family.MULTINOMIAL else 1.0
    z = CoefficientBlocks(gs.layout, gs.partition, beta.values - G / L)
    pb, _ = prox(z, gs.thresholds(lam, L), gs, tol=1e-12, max_passes=50_000)
    return float(L * np.linalg.norm(beta.values - pb.values))


@dataclass
class PathResult:
    lambdas: np.ndarray
    fits: list[FitResult]
    best_index: int | None = None

    @property
    def best(self) -> FitResult:
        if self.best_index is None:
            raise ValueError("no validation data was supplied; no selection made")
        return self.fits[self.best_index]


def fit_path(data: Dataset, basis: BasisSet, gs: GroupStructure, config: SolverConfig,
             valid_data: Dataset | None = None) -> PathResult:
    """Fit a decreasing penalty grid with warm starts.

    When validation data is given, each fit records its validation
    cross-entropy and ``best_index`` points at the minimizer (ties go to
    the larger penalty).
    """
    lam_hi = max(lambda_max(data, basis, gs, config.family, config=config), 1e-12)
    spec = config.path
    if spec.n_lambdas == 1:
        grid = np.array([lam_hi])
    else:
        grid = np.geomspace(lam_hi, lam_hi * spec.ratio, spec.n_lambdas)
    fits: list[FitResult] = []
    warm = None
    step_cfg = config
    for lam in grid:
        res = fit(data, basis, gs, step_cfg, lam=float(lam), warm_start=warm)
        warm = res.beta
        # carry the adapted curvature to the next, nearby problem
        step_cfg = replace(config, l0=res.step_curvature)
        if valid_data is not None:
            res.validation_loss = cross_entropy(res.beta, basis, valid_data)
        fits.append(res)
    best = None
    if valid_data is not None:
        best = int(np.argmin([f.validation_loss for f in fits]))
    return PathResult(lambdas=grid, fits=fits, best_index=best)
