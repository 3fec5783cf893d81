"""Hot numeric kernels: numba-compiled with a pure-numpy fallback.

The proximal operators run inside every solver iteration and dominate the
runtime of path fits, so their inner loops are compiled with numba when it
is available.  Set ``ASSOCLEARN_NUMBA=0`` to force the numpy fallback; both
paths implement identical update orders and are cross-checked in the test
suite and compared in ``benchmarks/bench_prox.py``.
"""
from __future__ import annotations

import os

import numpy as np


def _flag_enabled() -> bool:
    return os.environ.get("ASSOCLEARN_NUMBA", "1").strip().lower() not in ("0", "false", "off")


def _group_prox_loops(Z, out, row_lo, row_hi, col_lo, col_hi, thresh):
    """Scale each rectangular block of Z by its group-soft-threshold factor."""
    for g in range(thresh.shape[0]):
        t = thresh[g]
        sq = 0.0
        for r in range(row_lo[g], row_hi[g]):
            for c in range(col_lo[g], col_hi[g]):
                sq += Z[r, c] * Z[r, c]
        nrm = np.sqrt(sq)
        if nrm <= t or nrm == 0.0:
            scale = 0.0
        else:
            scale = 1.0 - t / nrm
        for r in range(row_lo[g], row_hi[g]):
            for c in range(col_lo[g], col_hi[g]):
                out[r, c] = scale * Z[r, c]
    return out


def _overlap_bcd_loops(Z, xi, thresh, member_rows, group_ptr, tol, max_passes):
    """Cyclic dual block updates for the overlapping-group prox.

    Each group keeps a dual block supported on its member rows, constrained
    to a ball of radius ``thresh[g]``; the primal point is Z minus the sum
    of dual blocks.  ``xi`` holds the dual blocks and is updated in place,
    so a caller can warm-start from a previous nearby solve.  Returns
    (B, passes, last max block change).
    """
    D, P = Z.shape
    G = thresh.shape[0]
    S = np.zeros((D, P))
    for i in range(member_rows.shape[0]):
        row = member_rows[i]
        for c in range(P):
            S[row, c] += xi[i, c]
    max_delta = 0.0
    passes = 0
    for _ in range(max_passes):
        passes += 1
        max_delta = 0.0
        for g in range(G):
            t = thresh[g]
            lo = group_ptr[g]
            hi = group_ptr[g + 1]
            sq = 0.0
            for i in range(lo, hi):
                row = member_rows[i]
                for c in range(P):
                    r = Z[row, c] - S[row, c] + xi[i, c]
                    sq += r * r
            nrm = np.sqrt(sq)
            if nrm <= t:
                scale = 1.0
            else:
                scale = t / nrm
            delta_sq = 0.0
            for i in range(lo, hi):
                row = member_rows[i]
                for c in range(P):
                    r = Z[row, c] - S[row, c] + xi[i, c]
                    new = scale * r
                    d = new - xi[i, c]
                    delta_sq += d * d
                    S[row, c] += d
                    xi[i, c] = new
            block_delta = np.sqrt(delta_sq)
            if block_delta > max_delta:
                max_delta = block_delta
        if max_delta <= tol:
            break
    return Z - S, passes, max_delta


def _group_prox_numpy(Z, out, row_lo, row_hi, col_lo, col_hi, thresh):
    for g in range(thresh.shape[0]):
        block = Z[row_lo[g]:row_hi[g], col_lo[g]:col_hi[g]]
        nrm = np.linalg.norm(block)
        t = thresh[g]
        scale = 0.0 if (nrm <= t or nrm == 0.0) else 1.0 - t / nrm
        out[row_lo[g]:row_hi[g], col_lo[g]:col_hi[g]] = scale * block
    return out


def _overlap_bcd_numpy(Z, xi, thresh, member_rows, group_ptr, tol, max_passes):
    D, P = Z.shape
    G = thresh.shape[0]
    S = np.zeros((D, P))
    np.add.at(S, member_rows, xi)
    max_delta = 0.0
    passes = 0
    for _ in range(max_passes):
        passes += 1
        max_delta = 0.0
        for g in range(G):
            lo, hi = group_ptr[g], group_ptr[g + 1]
            rows = member_rows[lo:hi]
            r = Z[rows] - S[rows] + xi[lo:hi]
            nrm = np.linalg.norm(r)
            t = thresh[g]
            scale = 1.0 if nrm <= t else t / nrm
            new = scale * r
            d = new - xi[lo:hi]
            block_delta = np.linalg.norm(d)
            S[rows] += d
            xi[lo:hi] = new
            if block_delta > max_delta:
                max_delta = block_delta
        if max_delta <= tol:
            break
    return Z - S, passes, max_delta


USING_NUMBA = False
group_prox_nb = None
overlap_bcd_nb = None

if _flag_enabled():
    try:
        from numba import njit

        group_prox_nb = njit(cache=True)(_group_prox_loops)
        overlap_bcd_nb = njit(cache=True)(_overlap_bcd_loops)
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay runnable
        USING_NUMBA = False

if USING_NUMBA:
    group_prox_kernel = group_prox_nb
    overlap_bcd_kernel = overlap_bcd_nb
else:
    group_prox_kernel = _group_prox_numpy
    overlap_bcd_kernel = _overlap_bcd_numpy
