"""Permutation-aligned mean-absolute errors for endmembers and abundances."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from scmunmix.core import ScmError, ShapeError

EXHAUSTIVE_MAX = 8
EXHAUSTIVE_HARD_LIMIT = 12


def _pair_cost(est: np.ndarray, truth: np.ndarray) -> np.ndarray:
    # cost[i, k] = mean |est_i - truth_k|
    return np.abs(est[:, None, :] - truth[None, :, :]).mean(axis=2)


def _exhaustive(cost: np.ndarray) -> np.ndarray:
    m = cost.shape[0]
    rows = np.arange(m)
    best, best_val = None, np.inf
    # lexicographic order, strict improvement keeps the smallest tied permutation
    for p in permutations(range(m)):
        val = cost[rows, p].sum()
        if val < best_val:
            best, best_val = p, val
    return np.array(best)


def best_permutation(est_R, true_M, method: str = "auto") -> np.ndarray:
    """perm[i] = truth row matched to estimate row i, minimizing the endmember error.

    ``method`` is ``"exhaustive"``, ``"hungarian"`` or ``"auto"`` (exhaustive
    up to M = 8).
    """
    est = np.asarray(est_R, dtype=float)
    truth = np.asarray(true_M, dtype=float)
    if est.shape != truth.shape or est.ndim != 2:
        raise ShapeError("endmember matrices", truth.shape, est.shape)
    m = est.shape[0]
    cost = _pair_cost(est, truth)
    if method == "auto":
        method = "exhaustive" if m <= EXHAUSTIVE_MAX else "hungarian"
    if method == "exhaustive":
        if m > EXHAUSTIVE_HARD_LIMIT:
            raise ScmError(f"exhaustive matching refused for M={m} > {EXHAUSTIVE_HARD_LIMIT}")
        return _exhaustive(cost)
    if method == "hungarian":
        rows, cols = linear_sum_assignment(cost)
        perm = np.empty(m, dtype=int)
        perm[rows] = cols
        return perm
    raise ScmError(f"unknown matching method {method!r}")


def endmember_error(est_R, true_M, perm) -> float:
    """(1/MB) sum |m_ij - r_ij| after matching estimate i to truth perm[i]."""
    est = np.asarray(est_R, dtype=float)
    truth = np.asarray(true_M, dtype=float)
    if est.shape != truth.shape:
        raise ShapeError("endmember matrices", truth.shape, est.shape)
    return float(np.mean(np.abs(est - truth[np.asarray(perm)])))


def abundance_error(est_A, true_A, perm) -> float:
    """(1/NM) sum |alpha_ij - alpha'_ij| with estimate column i compared to truth column perm[i]."""
    est = np.asarray(est_A, dtype=float)
    truth = np.asarray(true_A, dtype=float)
    if est.shape != truth.shape:
        raise ShapeError("abundance matrices", truth.shape, est.shape)
    return float(np.mean(np.abs(est - truth[:, np.asarray(perm)])))


@dataclass(frozen=True)
class AlignedErrors:
    permutation: np.ndarray
    endmember_error: float
    abundance_error: float


def aligned_errors(est_R, est_A, true_M, true_A) -> AlignedErrors:
    """Match once on endmember error and reuse that matching for the abundances."""
    perm = best_permutation(est_R, true_M)
    return AlignedErrors(perm, endmember_error(est_R, true_M, perm),
                         abundance_error(est_A, true_A, perm))
