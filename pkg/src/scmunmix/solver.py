"""Two-phase block coordinate descent for the spatial compositional model.

Phase 1 alternates a projected-gradient abundance step with a closed-form
(Sylvester) endmember step on the least-squares-plus-priors energy E2.
Phase 2 holds A and R fixed and estimates the noise precision gamma and the
scaled endmember precisions S_j by projected gradient on E1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from scmunmix import objective as obj
from scmunmix.core import (
    AbundanceMatrix,
    EndmemberSet,
    HsiCube,
    PrecisionSet,
    ScmConfig,
    ScmError,
    ScmResult,
    ShapeError,
)
from scmunmix.graphs import PriorGraphs, build_graphs
from scmunmix.objective import ScaledParams
from scmunmix.projections import project_spd_floor, simplex_rows

log = logging.getLogger(__name__)

INIT_RIDGE = 1e-6
KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-8
KMEANS_RESTARTS = 10
MAX_STEP_TRIALS = 50
GAMMA_INV_MIN = 1e-20
SPD_COND_MAX = 1e8   # S_j eigenvalues kept within [floor, floor * SPD_COND_MAX]


def scale_params(config: ScmConfig, n: int, m: int, b: int) -> ScaledParams:
    """Convert the normalized weights into the gamma ratios used in E2."""
    if min(n, m, b) < 1:
        raise ScmError("N, M and B must be >= 1")
    return ScaledParams(
        beta1_over_gamma=config.beta1_prime * b / m,
        beta2_over_gamma=config.beta2_prime * b / m,
        rho1_over_gamma=config.rho1_prime * n / m**2,
        rho2_over_gamma=config.rho2_prime * n / m,
    )


# --------------------------------------------------------------------------
# initialization

def _sqdist(y: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (y * y).sum(axis=1)[:, None] - 2.0 * y @ c.T + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_once(Y: np.ndarray, m: int, rng) -> tuple[np.ndarray, float]:
    n = Y.shape[0]
    centers = np.empty((m, Y.shape[1]))
    centers[0] = Y[rng.integers(n)]
    d2 = _sqdist(Y, centers[:1])[:, 0]
    for k in range(1, m):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[k] = Y[idx]
        d2 = np.minimum(d2, _sqdist(Y, centers[k:k + 1])[:, 0])

    for _ in range(KMEANS_MAX_ITER):
        dist = _sqdist(Y, centers)
        labels = np.argmin(dist, axis=1)
        new = np.empty_like(centers)
        for k in range(m):
            members = labels == k
            if members.any():
                new[k] = Y[members].mean(axis=0)
            else:
                far = int(np.argmax(dist[np.arange(n), labels]))
                new[k] = Y[far]
                labels[far] = k
                dist[far, k] = 0.0
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        if shift < KMEANS_TOL:
            break
    inertia = float(np.min(_sqdist(Y, centers), axis=1).sum())
    return centers, inertia


def kmeans_init(Y, m: int, seed: int = 0, restarts: int = KMEANS_RESTARTS) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding; returns the M x B centroids.

    Runs ``restarts`` independent seedings and keeps the lowest inertia.
    An emptied cluster is re-seeded at the point farthest from its current
    centroid.
    """
    if isinstance(Y, HsiCube):
        Y = Y.data
    Y = np.asarray(Y, dtype=float)
    if Y.shape[0] < m:
        raise ScmError(f"k-means needs at least M={m} pixels, got {Y.shape[0]}")
    if restarts < 1:
        raise ScmError("k-means restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best, best_inertia = None, np.inf
    for _ in range(restarts):
        centers, inertia = _kmeans_once(Y, m, rng)
        if inertia < best_inertia:
            best, best_inertia = centers, inertia
    return best


def init_abundances(Y, R, epsilon: float = INIT_RIDGE) -> AbundanceMatrix:
    """Ridge least squares projected row-wise onto the simplex."""
    Y = np.asarray(Y, dtype=float)
    R = np.asarray(R, dtype=float)
    gram = R @ R.T + epsilon * np.eye(R.shape[0])
    coef = la.solve(gram, R @ Y.T, assume_a="pos").T
    return AbundanceMatrix(simplex_rows(coef))


# --------------------------------------------------------------------------
# phase 1

class _E2Fixed:
    """E2 as a function of A with R held fixed (cheap per-trial evaluation)."""

    def __init__(self, Y, R, graphs: PriorGraphs, scaled: ScaledParams):
        self.yrt = Y @ R.T
        self.rrt = R @ R.T
        self.y2 = float(np.sum(Y * Y))
        self.graphs = graphs
        self.scaled = scaled
        _, pr, ps = obj.prior_terms(np.zeros((1, R.shape[0])), R, graphs,
                                    ScaledParams(0.0, 0.0, scaled.rho1_over_gamma,
                                                 scaled.rho2_over_gamma))
        self.prior_r = pr + ps

    def __call__(self, A) -> float:
        ls = self.y2 - 2.0 * np.sum(A * self.yrt) + np.sum((A.T @ A) * self.rrt)
        pa, _, _ = obj.prior_terms(A, np.zeros((A.shape[1], 1)), self.graphs,
                                   ScaledParams(self.scaled.beta1_over_gamma,
                                                self.scaled.beta2_over_gamma))
        return float(ls) + pa + self.prior_r


def _search(f, x0, direction, project, f0, tau_eps):
    """Try tau_eps * 10**i, i = 0, 1, ... while f keeps dropping; return (x, tau, f)."""
    tau = tau_eps
    x = project(x0 - tau * direction)
    fx = f(x)
    if not fx < f0:
        return x0, 0.0, f0
    for _ in range(MAX_STEP_TRIALS - 1):
        tau_next = tau * 10.0
        x_next = project(x0 - tau_next * direction)
        f_next = f(x_next)
        if not f_next < fx:
            break
        x, fx, tau = x_next, f_next, tau_next
    return x, tau, fx


def _initial_step(g: np.ndarray, x: np.ndarray) -> float:
    gn = np.linalg.norm(g)
    xn = np.linalg.norm(x)
    ratio = gn / xn if xn > 0 else gn
    return 1e-4 / max(1.0, ratio)


def step_A(Y, A, R, graphs: PriorGraphs, scaled: ScaledParams, tau_eps=None):
    """One projected steepest-descent step on A with the adaptive step rule.

    Returns ``(A_new, tau)``; ``tau == 0`` means no trial step lowered E2.
    """
    A = np.asarray(A, dtype=float)
    g = obj.grad_A(Y, A, R, graphs, scaled)
    if not np.any(g):
        return A, 0.0
    if tau_eps is None:
        tau_eps = _initial_step(g, A)
    f = _E2Fixed(Y, R, graphs, scaled)
    a_new, tau, _ = _search(f, A, 0.5 * g, simplex_rows, f(A), tau_eps)
    return a_new, tau


def step_R(Y, A, graphs: PriorGraphs, scaled: ScaledParams) -> np.ndarray:
    """Solve (A^T A + rho1 H) R + rho2 R G = A^T Y for R."""
    Y = np.asarray(Y, dtype=float)
    A = np.asarray(A, dtype=float)
    m = A.shape[1]
    p = A.T @ A + scaled.rho1_over_gamma * graphs.endmember[:m, :m]
    rhs = A.T @ Y
    lam, u = np.linalg.eigh(p)
    # G is singular too, so a singular P breaks both branches
    if lam[0] <= 1e-12 * max(abs(lam[-1]), 1.0):
        raise ScmError("R-step singular; increase rho1' or check A rank")
    if scaled.rho2_over_gamma == 0:
        return la.solve(p, rhs, assume_a="pos")
    # Transposed form rho2 G X + X P = Y^T A with X = R^T; diagonalizing P
    # turns every column into an independent tridiagonal solve.
    g = graphs.wavelength.toarray() if hasattr(graphs.wavelength, "toarray") else graphs.wavelength
    b = g.shape[0]
    d = rhs.T @ u
    ab = np.zeros((3, b))
    ab[0, 1:] = scaled.rho2_over_gamma * np.diag(g, 1)
    ab[2, :-1] = scaled.rho2_over_gamma * np.diag(g, -1)
    base = scaled.rho2_over_gamma * np.diag(g)
    x_rot = np.empty_like(d)
    for i in range(m):
        ab[1] = base + lam[i]
        x_rot[:, i] = la.solve_banded((1, 1), ab, d[:, i])
    return (x_rot @ u.T).T


@dataclass
class PhaseAR:
    A: np.ndarray
    R: np.ndarray
    energy_trace: list
    iterations: int
    converged: bool
    steps: list = field(default_factory=list)


def run_phase_AR(cube: HsiCube, config: ScmConfig, graphs: PriorGraphs | None = None,
                 R0=None, A0=None) -> PhaseAR:
    """Alternate step_A / step_R from the k-means initialization until E2 settles."""
    Y = cube.data
    n, b = Y.shape
    m = config.num_endmembers
    if graphs is None:
        graphs = build_graphs(cube, m, config.eta, config.neighborhood, config.segmentation)
    scaled = scale_params(config, n, m, b)
    R = kmeans_init(Y, m, config.rng_seed) if R0 is None else np.array(R0, dtype=float)
    A = init_abundances(Y, R).values.copy() if A0 is None else np.array(A0, dtype=float)

    trace = [obj.energy_E2(Y, A, R, graphs, scaled)]
    steps = []
    converged = False
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        A, tau = step_A(Y, A, R, graphs, scaled)
        R = step_R(Y, A, graphs, scaled)
        if config.clamp_r:
            R = np.maximum(R, 0.0)
        steps.append(tau)
        trace.append(obj.energy_E2(Y, A, R, graphs, scaled))
        prev, cur = trace[-2], trace[-1]
        if abs(prev - cur) / max(abs(prev), 1e-30) < config.energy_rel_tol:
            converged = True
            break
    log.debug("phase 1: %d iterations, E2 %.6g -> %.6g", it, trace[0], trace[-1])
    return PhaseAR(A, R, trace, it, converged, steps)


# --------------------------------------------------------------------------
# phase 2

def update_gamma(Y, A, R, precisions: PrecisionSet) -> tuple[float, bool]:
    """Closed-form gamma given S_j; returns ``(gamma, clamped)``.

    The bracket is positive in exact arithmetic; if round-off makes it
    non-positive, gamma^-1 is clamped to 1e-20 and ``clamped`` is True.
    """
    Y, A, R = (np.asarray(x, dtype=float) for x in (Y, A, R))
    n, b = Y.shape
    res = Y - A @ R
    z = (res.T @ A).ravel(order="F")
    cf = obj.factor_Q(obj.assemble_Q(precisions, A))
    bracket = (float(np.sum(res * res)) - float(z @ la.cho_solve(cf, z))) / (n * b)
    if bracket <= GAMMA_INV_MIN:
        return 1.0 / GAMMA_INV_MIN, True
    return 1.0 / bracket, False


class _BlockEnergy:
    """E1 restricted to one S_j with everything else fixed.

    With the other blocks eliminated by a Schur complement,
        Q / Q_oo = S_j + T,   z-part w = z_j - Q_jo Q_oo^-1 z_o,
    the S_j-dependent part of E1 is
        f(S) = -gamma w^T (S + T)^-1 w + log|S + T| - log|S|.
    """

    def __init__(self, gram: np.ndarray, mats: list, z: np.ndarray, gamma: float, j: int):
        m = gram.shape[0]
        b = mats[j].shape[0]
        zb = z.reshape(m, b)
        others = [k for k in range(m) if k != j]
        self.gamma = gamma
        self.b = b
        if others:
            qoo = np.kron(gram[np.ix_(others, others)], np.eye(b))
            for pos, k in enumerate(others):
                qoo[pos * b:(pos + 1) * b, pos * b:(pos + 1) * b] += mats[k]
            qoj = np.kron(gram[others, j][:, None], np.eye(b))
            cf = obj.factor_Q(qoo)
            x = la.cho_solve(cf, np.column_stack([qoj, zb[others].ravel()]))
            t = gram[j, j] * np.eye(b) - qoj.T @ x[:, :b]
            self.t = 0.5 * (t + t.T)
            self.w = zb[j] - qoj.T @ x[:, b]
        else:
            self.t = gram[j, j] * np.eye(b)
            self.w = zb[j].copy()

    def value(self, s: np.ndarray) -> float:
        sign, logdet_s = np.linalg.slogdet(s)
        if sign <= 0:
            return np.inf
        try:
            cf = la.cho_factor(s + self.t, lower=True)
        except la.LinAlgError as exc:
            raise ScmError("Q not positive definite") from exc
        quad = float(self.w @ la.cho_solve(cf, self.w))
        return -self.gamma * quad + obj.logdet_from_factor(cf) - logdet_s

    def grad(self, s: np.ndarray) -> np.ndarray:
        cf = la.cho_factor(s + self.t, lower=True)
        inv_st = la.cho_solve(cf, np.eye(self.b))
        v = inv_st @ self.w
        s_inv = la.cho_solve(la.cho_factor(s, lower=True), np.eye(self.b))
        g = self.gamma * np.outer(v, v) - s_inv + inv_st
        return 0.5 * (g + g.T)


def step_Sj(gram, mats: list, z, gamma: float, j: int, floor: float,
            ceiling: float | None = None):
    """Projected descent update of S_j with the same adaptive step rule as step_A.

    The search direction is the gradient preconditioned by the SPD geometry,
    S g S. The plain gradient mixes curvatures from ~1/lambda_min^2 down to
    ~0 across eigen-directions, so no single step length suits all of them
    and the iteration stalls once S is ill-conditioned; S g S equalizes them.
    ``ceiling`` caps the eigenvalues of S_j (default ``floor * SPD_COND_MAX``).
    Returns ``(S_j_new, tau)``.
    """
    if ceiling is None:
        ceiling = floor * SPD_COND_MAX
    blk = _BlockEnergy(gram, mats, z, gamma, j)
    s0 = mats[j]
    # work in the eigenbasis of S: forming S g S or S^-1 directly loses the
    # small eigen-directions to round-off once S is ill-conditioned
    lam, u = np.linalg.eigh(s0)
    if lam[0] <= 0:
        raise ScmError(f"precision {j} is not positive definite")
    cf = la.cho_factor(s0 + blk.t, lower=True)
    vu = u.T @ la.cho_solve(cf, blk.w)
    gu = gamma * np.outer(vu, vu) - np.diag(1.0 / lam) + u.T @ la.cho_solve(cf, u)
    gu = 0.5 * (gu + gu.T)
    if not np.any(gu):
        return s0, 0.0
    root = np.sqrt(lam)
    d = u @ (lam[:, None] * gu * lam[None, :]) @ u.T
    d = 0.5 * (d + d.T)
    # scale-free in the SPD metric: |S^-1/2 d S^-1/2| = |S^1/2 g S^1/2|
    tau_eps = 1e-4 / max(1.0, float(np.linalg.norm(root[:, None] * gu * root[None, :])))
    s_new, tau, _ = _search(blk.value, s0, d,
                            lambda x: project_spd_floor(x, floor, ceiling),
                            blk.value(s0), tau_eps)
    return s_new, tau


@dataclass
class PhaseCov:
    precisions: PrecisionSet
    energy_trace: list
    iterations: int
    converged: bool
    gamma_clamped: bool
    gamma0: float


def run_phase_covariance(Y, A, R, config: ScmConfig, graphs: PriorGraphs | None = None,
                         scaled: ScaledParams | None = None) -> PhaseCov:
    """Estimate gamma and S_j with A, R fixed.

    Starts from gamma^-1 = |Y - AR|^2 / NB and Sigma_j = sigma0^2 I, i.e.
    S_j = I / (gamma sigma0^2). Each iteration sweeps j = 1..M once and then
    refreshes gamma; the eigenvalue floor 1/(gamma sigma_max^2) follows the
    current gamma.
    """
    Y, A, R = (np.asarray(x, dtype=float) for x in (Y, A, R))
    n, b = Y.shape
    m = A.shape[1]
    if R.shape != (m, b):
        raise ShapeError("endmember matrix shape", (m, b), R.shape)
    if scaled is None:
        scaled = scale_params(config, n, m, b)
    res = Y - A @ R
    gamma_inv = float(np.sum(res * res)) / (n * b)
    clamped = gamma_inv <= GAMMA_INV_MIN
    gamma = 1.0 / max(gamma_inv, GAMMA_INV_MIN)
    gamma0 = gamma
    weights = scaled.at_gamma(gamma0)
    mats = [np.eye(b) / (gamma * config.sigma0**2) for _ in range(m)]
    gram = A.T @ A
    z = (res.T @ A).ravel(order="F")

    if graphs is None:
        # the priors are constant while A and R are fixed
        weights = ScaledParams()

    def energy(ms, gm):
        return obj.energy_E1(Y, A, R, PrecisionSet(tuple(ms), gm), graphs, weights).total_E1

    # fixed for the whole phase so a gamma update never pulls S_j down
    ceiling = SPD_COND_MAX / (gamma0 * config.sigma_max**2)
    trace = [energy(mats, gamma)]
    converged = False
    it = 0
    for it in range(1, config.max_inner_iters + 1):
        floor = 1.0 / (gamma * config.sigma_max**2)
        for j in range(m):
            mats[j], _ = step_Sj(gram, mats, z, gamma, j, floor, ceiling)
        new_gamma, c = update_gamma(Y, A, R, PrecisionSet(tuple(mats), gamma))
        clamped = clamped or c
        gamma = new_gamma
        trace.append(energy(mats, gamma))
        # E1 carries the offset -NB log gamma, which depends on the units of Y;
        # measure the change against NB, the size of the data term at the optimum
        if abs(trace[-2] - trace[-1]) / (n * b) < config.energy_rel_tol:
            converged = True
            break
    log.debug("phase 2: %d iterations, E1 %.6g -> %.6g", it, trace[0], trace[-1])
    return PhaseCov(PrecisionSet(tuple(mats), gamma), trace, it, converged, clamped, gamma0)


# --------------------------------------------------------------------------

def unmix(cube: HsiCube, config: ScmConfig, estimate_covariance: bool = True) -> ScmResult:
    """Run both phases and return endmembers, abundances and uncertainty.

    With ``estimate_covariance=False`` only phase 1 runs and the returned
    covariances are the phase-2 starting values sigma0^2 I.
    """
    from scmunmix.uncertainty import residual_diagnostics

    m = config.num_endmembers
    n, b = cube.data.shape
    if n < m:
        raise ScmError(f"setup: need at least M={m} pixels, got {n}")
    try:
        graphs = build_graphs(cube, m, config.eta, config.neighborhood, config.segmentation)
        scaled = scale_params(config, n, m, b)
    except ScmError as exc:
        raise ScmError(f"setup: {exc}") from exc
    try:
        p1 = run_phase_AR(cube, config, graphs)
    except ScmError as exc:
        raise ScmError(f"phase AR: {exc}") from exc

    Y = cube.data
    A = AbundanceMatrix(p1.A)
    diagnostics = {
        "phase1_iterations": p1.iterations,
        "phase1_converged": p1.converged,
        "negative_R_entries": int(np.count_nonzero(p1.R < 0)),
        "covariance_estimated": estimate_covariance,
    }
    res = Y - p1.A @ p1.R
    if not estimate_covariance:
        gamma_inv = max(float(np.sum(res * res)) / (n * b), GAMMA_INV_MIN)
        covs = [config.sigma0**2 * np.eye(b) for _ in range(m)]
        ems = EndmemberSet(p1.R, tuple(covs), gamma_inv**0.5, config.sigma_max)
        return ScmResult(ems, A, tuple(p1.energy_trace), (), diagnostics, p1.iterations)

    try:
        p2 = run_phase_covariance(Y, p1.A, p1.R, config, graphs, scaled)
    except ScmError as exc:
        raise ScmError(f"phase covariance: {exc}") from exc
    prec = p2.precisions
    floor = 1.0 / (prec.gamma * config.sigma_max**2)
    reprojected = False
    mats = list(prec.matrices)
    for j, s in enumerate(mats):
        if np.linalg.eigvalsh(s)[0] < floor:
            mats[j] = project_spd_floor(s, floor)
            reprojected = True
    prec = PrecisionSet(tuple(mats), prec.gamma)
    covs, mu = prec.to_covariances()
    # eigenvalues of Sigma_j are bounded by sigma_max^2 up to eigensolver round-off
    cap = config.sigma_max**2
    for j, c in enumerate(covs):
        w, u = np.linalg.eigh(c)
        if w[-1] > cap or w[0] < 0:
            covs[j] = (u * np.clip(w, 0.0, cap)) @ u.T
            covs[j] = 0.5 * (covs[j] + covs[j].T)
    diagnostics.update(
        phase2_iterations=p2.iterations,
        phase2_converged=p2.converged,
        gamma_clamped=p2.gamma_clamped,
        floor_reprojected=reprojected,
        gamma=prec.gamma,
    )
    if np.any(res) and not p2.gamma_clamped:
        diag = residual_diagnostics(Y, p1.A, p1.R, prec)
        diagnostics.update(ratio_quad=diag.ratio_quad, ratio_logdet=diag.ratio_logdet)
    ems = EndmemberSet(p1.R, tuple(covs), mu, config.sigma_max)
    return ScmResult(ems, A, tuple(p1.energy_trace), tuple(p2.energy_trace), diagnostics,
                     p1.iterations + p2.iterations, prec)
