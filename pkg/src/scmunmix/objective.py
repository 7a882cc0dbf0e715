"""Reduced energies, their gradients, and the Q / z quantities.

Q = blockdiag(S_1..S_M) + (A^T A) kron I_B is only ever used through its
Cholesky factor; Q^-1 is never formed explicitly except block by block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from scmunmix.core import PrecisionSet, ScmError, ShapeError
from scmunmix.graphs import PriorGraphs


@dataclass(frozen=True)
class ScaledParams:
    """Prior weights divided by gamma, as they appear in E2."""

    beta1_over_gamma: float = 0.0
    beta2_over_gamma: float = 0.0
    rho1_over_gamma: float = 0.0
    rho2_over_gamma: float = 0.0

    def at_gamma(self, gamma: float) -> "ScaledParams":
        """Absolute prior weights (beta1, beta2, rho1, rho2) for a given gamma."""
        return ScaledParams(self.beta1_over_gamma * gamma, self.beta2_over_gamma * gamma,
                            self.rho1_over_gamma * gamma, self.rho2_over_gamma * gamma)


@dataclass(frozen=True)
class EnergyBreakdown:
    least_squares: float
    quad_correction: float
    logdet_Q: float
    sum_logdet_S: float
    gamma_term: float
    prior_A: float
    prior_R_pairwise: float
    prior_R_smooth: float

    @property
    def total_E1(self) -> float:
        return (self.least_squares - self.quad_correction + self.logdet_Q
                - self.sum_logdet_S + self.gamma_term + self.prior_A
                + self.prior_R_pairwise + self.prior_R_smooth)


def _matrices(precisions) -> list[np.ndarray]:
    if isinstance(precisions, PrecisionSet):
        return list(precisions.matrices)
    return [np.asarray(s, dtype=float) for s in precisions]


def assemble_Q(precisions, A: np.ndarray) -> np.ndarray:
    """Dense MB x MB matrix with blocks delta_ij S_j + (A^T A)_ij I_B."""
    mats = _matrices(precisions)
    A = np.asarray(A, dtype=float)
    m = A.shape[1]
    if len(mats) != m:
        raise ShapeError("number of precision matrices", m, len(mats))
    b = mats[0].shape[0]
    q = np.kron(A.T @ A, np.eye(b))
    for j, s in enumerate(mats):
        if s.shape != (b, b):
            raise ShapeError(f"precision {j} shape", (b, b), s.shape)
        q[j * b:(j + 1) * b, j * b:(j + 1) * b] += s
    return q


def factor_Q(q: np.ndarray):
    try:
        return la.cho_factor(q, lower=True, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise ScmError("Q not positive definite") from exc


def logdet_from_factor(cf) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


def assemble_z(Y: np.ndarray, A: np.ndarray, R: np.ndarray) -> np.ndarray:
    """vec((Y - AR)^T A), stacking the columns of the B x M matrix."""
    Y, A, R = (np.asarray(x, dtype=float) for x in (Y, A, R))
    _check_shapes(Y, A, R)
    return ((Y - A @ R).T @ A).ravel(order="F")


def _check_shapes(Y, A, R):
    n, b = Y.shape
    if A.shape[0] != n:
        raise ShapeError("abundance rows", n, A.shape[0])
    if R.shape != (A.shape[1], b):
        raise ShapeError("endmember matrix shape", (A.shape[1], b), R.shape)


def prior_terms(A, R, graphs: PriorGraphs, scaled: ScaledParams) -> tuple[float, float, float]:
    """(A prior, R pairwise prior, R smoothness prior) under the given weights.

    The sparsity part is kept separate from the Laplacian part so beta1 = 0
    never needs a division.
    """
    prior_a = 0.0
    if scaled.beta1_over_gamma:
        prior_a += scaled.beta1_over_gamma * float(np.sum(A * (graphs.spatial @ A)))
    if scaled.beta2_over_gamma:
        prior_a -= scaled.beta2_over_gamma * float(np.sum(A * A))
    pair = 0.0
    if scaled.rho1_over_gamma:
        pair = scaled.rho1_over_gamma * float(np.sum(R * (graphs.endmember @ R)))
    smooth = 0.0
    if scaled.rho2_over_gamma:
        smooth = scaled.rho2_over_gamma * float(np.sum(R * (graphs.wavelength @ R.T).T))
    return prior_a, pair, smooth


def energy_E2(Y, A, R, graphs: PriorGraphs, scaled: ScaledParams) -> float:
    """Least squares plus the gamma-scaled priors (the phase-1 objective)."""
    _check_shapes(Y, A, R)
    res = Y - A @ R
    return float(np.sum(res * res)) + sum(prior_terms(A, R, graphs, scaled))


def grad_A(Y, A, R, graphs: PriorGraphs, scaled: ScaledParams) -> np.ndarray:
    """Gradient of E2 with respect to A."""
    g = A @ (R @ R.T) - Y @ R.T
    if scaled.beta1_over_gamma:
        g += scaled.beta1_over_gamma * (graphs.spatial @ A)
    if scaled.beta2_over_gamma:
        g -= scaled.beta2_over_gamma * A
    return 2.0 * g


def energy_E1(Y, A, R, precisions: PrecisionSet, graphs: PriorGraphs,
              weights: ScaledParams) -> EnergyBreakdown:
    """Full reduced negative log posterior, term by term.

    ``weights`` are the absolute prior weights (beta1, beta2, rho1, rho2),
    e.g. ``scaled.at_gamma(gamma_ref)``; they do not follow ``precisions.gamma``.
    """
    Y, A, R = (np.asarray(x, dtype=float) for x in (Y, A, R))
    _check_shapes(Y, A, R)
    gamma = precisions.gamma
    n, b = Y.shape
    res = Y - A @ R
    z = (res.T @ A).ravel(order="F")
    cf = factor_Q(assemble_Q(precisions, A))
    quad = float(z @ la.cho_solve(cf, z))
    sum_logdet_s = 0.0
    for j, s in enumerate(precisions.matrices):
        sign, ld = np.linalg.slogdet(s)
        if sign <= 0:
            raise ScmError(f"precision {j} is not positive definite")
        sum_logdet_s += ld
    pa, pr, ps = prior_terms(A, R, graphs, weights)
    return EnergyBreakdown(
        least_squares=gamma * float(np.sum(res * res)),
        quad_correction=gamma * quad,
        logdet_Q=logdet_from_factor(cf),
        sum_logdet_S=sum_logdet_s,
        gamma_term=-n * b * np.log(gamma),
        prior_A=pa,
        prior_R_pairwise=pr,
        prior_R_smooth=ps,
    )


def q_inverse_block(cf, j: int, b: int) -> np.ndarray:
    """The j-th diagonal B x B block of Q^-1."""
    mb = cf[0].shape[0]
    e = np.zeros((mb, b))
    e[j * b:(j + 1) * b] = np.eye(b)
    return la.cho_solve(cf, e)[j * b:(j + 1) * b]


def grad_Sj(precisions: PrecisionSet, A, z, j: int, cf=None) -> np.ndarray:
    """Gradient of E1 with respect to S_j.

    ``cf`` may carry a precomputed Cholesky factor of Q.
    """
    mats = precisions.matrices
    b = mats[j].shape[0]
    if cf is None:
        cf = factor_Q(assemble_Q(precisions, A))
    w = la.cho_solve(cf, np.asarray(z, dtype=float))[j * b:(j + 1) * b]
    try:
        s_inv = la.cho_solve(la.cho_factor(mats[j], lower=True), np.eye(b))
    except la.LinAlgError as exc:
        raise ScmError(f"precision {j} is singular") from exc
    g = precisions.gamma * np.outer(w, w) - s_inv + q_inverse_block(cf, j, b)
    return 0.5 * (g + g.T)
