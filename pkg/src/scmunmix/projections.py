"""Euclidean projections used by the gradient-projection steps."""

from __future__ import annotations

import numpy as np

from scmunmix.core import AbundanceMatrix, ScmError


def simplex_rows(X: np.ndarray) -> np.ndarray:
    """Project every row of X onto {a >= 0, sum(a) = 1} (sort-and-threshold)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ScmError("simplex projection input contains non-finite values")
    n, m = X.shape
    if m < 1:
        raise ScmError("simplex projection needs at least one column")
    # stable sort on the negated values gives descending order with ties by column index
    order = np.argsort(-X, axis=1, kind="stable")
    srt = np.take_along_axis(X, order, axis=1)
    k = np.arange(1, m + 1)
    cums = np.cumsum(srt, axis=1) - 1.0
    support = srt - cums / k > 0
    # support is a prefix of the sorted row; its length is the largest valid k
    kk = np.count_nonzero(support, axis=1)
    theta = cums[np.arange(n), kk - 1] / kk
    out = np.maximum(X - theta[:, None], 0.0)
    # absorb the last ulp of drift so the row sums are exactly representable as 1
    out /= out.sum(axis=1, keepdims=True)
    return out


def project_simplex_rows(X: np.ndarray) -> AbundanceMatrix:
    return AbundanceMatrix(simplex_rows(X))


def project_spd_floor(X: np.ndarray, floor: float, ceiling: float | None = None) -> np.ndarray:
    """Clamp the eigenvalues of sym(X) from below at ``floor``.

    ``ceiling`` optionally clamps from above as well (the solver uses it to
    bound the condition number; psi itself has no ceiling).
    """
    if not floor > 0:
        raise ScmError(f"eigenvalue floor must be positive, got {floor!r}")
    if ceiling is not None and not ceiling >= floor:
        raise ScmError(f"eigenvalue ceiling {ceiling!r} below floor {floor!r}")
    X = np.asarray(X, dtype=float)
    sym = 0.5 * (X + X.T)
    try:
        w, u = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise ScmError("eigendecomposition failed in SPD projection") from exc
    w = np.maximum(w, floor) if ceiling is None else np.clip(w, floor, ceiling)
    out = (u * w) @ u.T
    return 0.5 * (out + out.T)
