"""Uncertainty amount / direction / range and the residual magnitude ratios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from scmunmix import objective as obj
from scmunmix.core import EndmemberSet, PrecisionSet, ScmError, ShapeError


@dataclass(frozen=True)
class UncertaintySummary:
    """Per-endmember top eigenpair of Sigma_j and the band r_j +/- 2 sigma_j u_j."""

    amount: np.ndarray      # (M,)
    direction: np.ndarray   # (M, B), unit rows
    band_lower: np.ndarray  # (M, B)
    band_upper: np.ndarray  # (M, B)
    means: np.ndarray       # (M, B)


def summarize_uncertainty(endmembers: EndmemberSet) -> UncertaintySummary:
    m, b = endmembers.means.shape
    amount = np.empty(m)
    direction = np.empty((m, b))
    for j, cov in enumerate(endmembers.covariances):
        try:
            w, u = np.linalg.eigh(cov)
        except np.linalg.LinAlgError as exc:
            raise ScmError(f"eigendecomposition of covariance {j} failed") from exc
        top = u[:, -1]
        # deterministic sign: largest-magnitude component positive
        if top[np.argmax(np.abs(top))] < 0:
            top = -top
        amount[j] = np.sqrt(max(w[-1], 0.0))
        direction[j] = top
    half = 2.0 * amount[:, None] * direction
    r = endmembers.means
    return UncertaintySummary(amount, direction, r - half, r + half, np.array(r))


def coverage_fraction(summary: UncertaintySummary, truth: np.ndarray,
                      matching=None) -> np.ndarray:
    """Fraction of bands where the true spectrum lies inside the uncertainty band.

    ``matching[j]`` is the truth row matched to estimate j (identity if None).
    """
    truth = np.asarray(truth, dtype=float)
    m, b = summary.means.shape
    if truth.shape != (m, b):
        raise ShapeError("ground-truth endmembers", (m, b), truth.shape)
    perm = np.arange(m) if matching is None else np.asarray(matching)
    if sorted(perm.tolist()) != list(range(m)):
        raise ScmError(f"matching is not a permutation of 0..{m - 1}")
    t = truth[perm]
    lo = np.minimum(summary.band_lower, summary.band_upper)
    hi = np.maximum(summary.band_lower, summary.band_upper)
    inside = (t >= lo) & (t <= hi)
    return inside.mean(axis=1)


@dataclass(frozen=True)
class ResidualDiagnostics:
    ratio_quad: float
    ratio_logdet: float


def residual_diagnostics(Y, A, R, precisions: PrecisionSet) -> ResidualDiagnostics:
    """Ratios of gamma z^T Q^-1 z and log|Q| - sum log|S_j| to gamma |Y - AR|_F^2."""
    Y, A, R = (np.asarray(x, dtype=float) for x in (Y, A, R))
    res = Y - A @ R
    ls = precisions.gamma * float(np.sum(res * res))
    if ls == 0:
        raise ScmError("diagnostics undefined for exact fit")
    z = (res.T @ A).ravel(order="F")
    cf = obj.factor_Q(obj.assemble_Q(precisions, A))
    quad = precisions.gamma * float(z @ la.cho_solve(cf, z))
    lds = sum(np.linalg.slogdet(s)[1] for s in precisions.matrices)
    return ResidualDiagnostics(quad / ls, (obj.logdet_from_factor(cf) - lds) / ls)
