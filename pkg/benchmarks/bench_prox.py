"""Benchmark the proximal kernels: numba JIT vs the pure-numpy fallback.

Runs the two hot kernels on a study-sized instance (the J=(2,2,2,3), d=4
layout with 10 per-predictor groups) and on a larger stress layout, then
times one full overlap-penalized path fit under both backends.

Usage:
    python benchmarks/bench_prox.py

The backend used by the installed package follows ASSOCLEARN_NUMBA; this
script calls both implementations directly, so one process covers both.
"""
import time

import numpy as np

from assoclearn import _kernels
from assoclearn.basis import build_basis
from assoclearn.layout import build_layout
from assoclearn.likelihood import Dataset, Family
from assoclearn.penalty import GroupStructure, PenaltyMode
from assoclearn.simulate import gen_design, gen_scheme_beta, sample_responses


def time_it(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_group_prox(layout, p, repeats=200):
    rng = np.random.default_rng(0)
    gs = GroupStructure.build(layout, (1,) * p, PenaltyMode.GROUP_LASSO)
    Z = rng.normal(size=(layout.total_dim, p))
    th = gs.thresholds(0.3, 1.0)
    i_idx, j_idx = np.nonzero(th)
    args = (gs.row_lo[i_idx], gs.row_hi[i_idx], gs.col_lo[j_idx], gs.col_hi[j_idx],
            np.ascontiguousarray(th[i_idx, j_idx]))

    out = Z.copy()
    t_np = time_it(lambda: _kernels._group_prox_numpy(Z, out, *args), repeats)
    results = [("numpy", t_np)]
    if _kernels.group_prox_nb is not None:
        _kernels.group_prox_nb(Z, out, *args)  # compile outside the timer
        t_nb = time_it(lambda: _kernels.group_prox_nb(Z, out, *args), repeats)
        results.append(("numba", t_nb))
    return results


def bench_overlap_bcd(layout, p, repeats=50):
    rng = np.random.default_rng(1)
    gs = GroupStructure.build(layout, (1,) * p, PenaltyMode.OVERLAPPING_HIERARCHICAL)
    Z = np.ascontiguousarray(rng.normal(size=(layout.total_dim, 1)))
    tj = np.ascontiguousarray(gs.thresholds(0.4, 1.0)[gs.rooted_order, 0])

    def run(kernel):
        xi = np.zeros((gs.member_rows.size, 1))
        kernel(Z, xi, tj, gs.member_rows, gs.group_ptr, 1e-10, 10_000)

    t_np = time_it(lambda: run(_kernels._overlap_bcd_numpy), repeats)
    results = [("numpy", t_np)]
    if _kernels.overlap_bcd_nb is not None:
        run(_kernels.overlap_bcd_nb)
        t_nb = time_it(lambda: run(_kernels.overlap_bcd_nb), repeats)
        results.append(("numba", t_nb))
    return results


def bench_full_fit():
    """One overlap-penalized fit, timed under each backend."""
    from assoclearn import penalty
    from assoclearn.solver import SolverConfig, fit, lambda_max

    layout = build_layout((2, 2, 2, 3), 4)
    basis = build_basis(layout)
    rng = np.random.default_rng(2)
    p = 10
    beta_star = gen_scheme_beta(2, layout, p, rng)
    X = gen_design(1000, p, rng)
    Y = sample_responses(X, beta_star, basis, Family.MULTINOMIAL, rng)
    data = Dataset(X, Y, layout)
    gs = GroupStructure.build(layout, (1,) * p, PenaltyMode.OVERLAPPING_HIERARCHICAL)
    config = SolverConfig(family=Family.MULTINOMIAL, tol=1e-8)
    lam = 0.3 * lambda_max(data, basis, gs, Family.MULTINOMIAL)

    results = []
    saved = penalty.overlap_bcd_kernel
    try:
        for name, kernel in (("numpy", _kernels._overlap_bcd_numpy),
                             ("numba", _kernels.overlap_bcd_nb)):
            if kernel is None:
                continue
            penalty.overlap_bcd_kernel = kernel
            fit(data, basis, gs, config, lam=lam)  # warm
            t0 = time.perf_counter()
            res = fit(data, basis, gs, config, lam=lam)
            results.append((name, time.perf_counter() - t0, res.iterations))
    finally:
        penalty.overlap_bcd_kernel = saved
    return results


def print_table(title, rows, unit="ms", scale=1e3, extra=None):
    print(f"\n{title}")
    base = None
    for row in rows:
        name, t = row[0], row[1]
        if base is None:
            base = t
        speedup = base / t
        note = f"  ({row[2]} iterations)" if extra and len(row) > 2 else ""
        print(f"  {name:>6}: {t * scale:9.3f} {unit}   speedup vs numpy: {speedup:5.1f}x{note}")


def main():
    print(f"numba available and enabled: {_kernels.USING_NUMBA}")
    study_layout = build_layout((2, 2, 2, 3), 4)
    big_layout = build_layout((3, 3, 3, 3, 2), 5)

    print_table("group prox, study layout (24 rows x 10 groups of 1 column)",
                bench_group_prox(study_layout, 10))
    print_table("group prox, stress layout (162 rows x 6 column blocks)",
                bench_group_prox(big_layout, 6))
    print_table("overlap dual BCD, study layout (15 rooted groups)",
                bench_overlap_bcd(study_layout, 1))
    print_table("overlap dual BCD, stress layout (31 rooted groups)",
                bench_overlap_bcd(big_layout, 1))
    print_table("full overlap-penalized fit (n=1000, p=10)", bench_full_fit(),
                unit="s", scale=1.0, extra=True)


if __name__ == "__main__":
    main()
