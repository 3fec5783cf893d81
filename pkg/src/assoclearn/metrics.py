"""Evaluation metrics on held-out data."""
from __future__ import annotations

import numpy as np

from .basis import BasisSet, CoefficientBlocks
from .likelihood import Dataset, cross_entropy, predict_prob_matrix

_SQRT2 = np.sqrt(2.0)


def hellinger(p: np.ndarray, r: np.ndarray) -> float:
    """Hellinger distance between two probability vectors, in [0, 1]."""
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    if p.shape != r.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {r.shape}")
    return float(np.linalg.norm(np.sqrt(p) - np.sqrt(r)) / _SQRT2)


def mean_hellinger(P_hat: np.ndarray, P_true: np.ndarray) -> float:
    """Average rowwise Hellinger distance between prediction matrices."""
    if P_hat.shape != P_true.shape:
        raise ValueError(f"shape mismatch: {P_hat.shape} vs {P_true.shape}")
    d = np.linalg.norm(np.sqrt(P_hat) - np.sqrt(P_true), axis=1) / _SQRT2
    return float(d.mean())


def misclassification(beta: CoefficientBlocks, basis: BasisSet, test: Dataset) -> float:
    """Fraction of test rows whose most probable joint category misses the
    realized one.  argmax takes the lowest vec index on ties."""
    P = predict_prob_matrix(beta, basis, test.X)
    pred = np.argmax(P, axis=1)
    actual = np.argmax(test.Y, axis=1)
    return float(np.mean(pred != actual))


def test_cross_entropy(beta: CoefficientBlocks, basis: BasisSet, test: Dataset) -> float:
    return cross_entropy(beta, basis, test)


def support_metrics(fitted_effects, true_effects, all_effects) -> tuple[float, float, bool]:
    """Effect-level TPR, FPR, and exact-recovery flag (overall effect ignored)."""
    fitted = {tuple(sorted(k)) for k in fitted_effects if len(k) > 0}
    truth = {tuple(sorted(k)) for k in true_effects if len(k) > 0}
    candidates = {tuple(sorted(k)) for k in all_effects if len(k) > 0}
    tpr = len(fitted & truth) / len(truth) if truth else 1.0
    negatives = candidates - truth
    fpr = len(fitted - truth) / len(negatives) if negatives else 0.0
    return float(tpr), float(fpr), fitted == truth
