"""Domain types shared across the package.

All containers are frozen dataclasses whose arrays are made read-only on
construction, so instances can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

TOL_SIMPLEX = 1e-12


class ScmError(ValueError):
    """Base class for every error raised by this package."""


class ShapeError(ScmError):
    """Raised when an array does not have the expected size or shape."""

    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HsiCube:
    """N x B reflectance matrix with its spatial grid (raster row-major)."""

    height: int
    width: int
    bands: int
    data: np.ndarray

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.bands < 1:
            raise ScmError(
                f"cube dimensions must be positive, got {self.height}x{self.width}x{self.bands}"
            )
        data = _frozen(self.data)
        expected = (self.height * self.width, self.bands)
        if data.shape != expected:
            raise ShapeError("cube data shape", expected, data.shape)
        object.__setattr__(self, "data", data)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def image(self) -> np.ndarray:
        """Return the data as a height x width x bands view."""
        return self.data.reshape(self.height, self.width, self.bands)


def new_hsi_cube(height: int, width: int, bands: int, data) -> HsiCube:
    """Build a cube from a flat band-fastest sequence or an (N, B) array."""
    flat = np.asarray(data, dtype=float).ravel()
    n_expected = height * width * bands
    if flat.size != n_expected:
        raise ShapeError("cube values", f"{n_expected} values", f"{flat.size} values")
    return HsiCube(height, width, bands, flat.reshape(height * width, bands))


@dataclass(frozen=True)
class AbundanceMatrix:
    """N x M matrix whose rows lie on the probability simplex."""

    values: np.ndarray

    def __post_init__(self):
        a = _frozen(self.values)
        if a.ndim != 2:
            raise ShapeError("abundance matrix ndim", 2, a.ndim)
        if not np.all(np.isfinite(a)):
            raise ScmError("abundances contain non-finite values")
        m = a.shape[1]
        if a.size and a.min() < -TOL_SIMPLEX:
            i, j = np.unravel_index(np.argmin(a), a.shape)
            raise ScmError(f"abundance ({i}, {j}) = {a[i, j]!r} is negative")
        dev = np.abs(a.sum(axis=1) - 1.0)
        if dev.size and dev.max() > TOL_SIMPLEX * m:
            i = int(np.argmax(dev))
            raise ScmError(f"abundance row {i} sums to {a[i].sum()!r}, not 1")
        object.__setattr__(self, "values", a)

    @property
    def n_pixels(self) -> int:
        return self.values.shape[0]

    @property
    def n_endmembers(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EndmemberSet:
    """Endmember means R (M x B), covariances Sigma_j and noise std mu."""

    means: np.ndarray
    covariances: tuple
    noise_std: float
    sigma_max: float = 1.0
    negative_means: int = field(init=False)

    def __post_init__(self):
        r = _frozen(self.means)
        if r.ndim != 2:
            raise ShapeError("endmember means ndim", 2, r.ndim)
        m, b = r.shape
        if len(self.covariances) != m:
            raise ShapeError("number of covariances", m, len(self.covariances))
        covs = []
        cap = self.sigma_max**2 + 1e-8
        for j, c in enumerate(self.covariances):
            c = _frozen(c)
            if c.shape != (b, b):
                raise ShapeError(f"covariance {j} shape", (b, b), c.shape)
            if np.max(np.abs(c - c.T), initial=0.0) > 1e-10:
                raise ScmError(f"covariance {j} is not symmetric")
            ev = np.linalg.eigvalsh(c)
            # PSD check relative to the cap; round-off on a B x B eigensolve.
            if ev[0] < -1e-10 * max(1.0, ev[-1]) or ev[-1] > cap:
                raise ScmError(
                    f"covariance {j} eigenvalues [{ev[0]:.3g}, {ev[-1]:.3g}] outside [0, sigma_max^2]"
                )
            covs.append(c)
        if self.noise_std < 0:
            raise ScmError("noise_std must be nonnegative")
        object.__setattr__(self, "means", r)
        object.__setattr__(self, "covariances", tuple(covs))
        object.__setattr__(self, "negative_means", int(np.count_nonzero(r < 0)))

    @property
    def n_endmembers(self) -> int:
        return self.means.shape[0]

    @property
    def bands(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class PrecisionSet:
    """Scaled precisions S_j = mu^2 Sigma_j^-1 together with gamma = mu^-2."""

    matrices: tuple
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ScmError(f"gamma must be positive, got {self.gamma!r}")
        mats = []
        for j, s in enumerate(self.matrices):
            s = _frozen(s)
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise ShapeError(f"precision {j} shape", "square", s.shape)
            if np.max(np.abs(s - s.T), initial=0.0) > 1e-10 * max(1.0, np.abs(s).max()):
                raise ScmError(f"precision {j} is not symmetric")
            mats.append(s)
        object.__setattr__(self, "matrices", tuple(mats))

    @property
    def n_endmembers(self) -> int:
        return len(self.matrices)

    def check_floor(self, sigma_max: float) -> None:
        """Raise unless every S_j has eigenvalues >= 1/(gamma sigma_max^2)."""
        floor = 1.0 / (self.gamma * sigma_max**2)
        for j, s in enumerate(self.matrices):
            ev = np.linalg.eigvalsh(s)[0]
            if ev < floor - 1e-10 * max(1.0, floor):
                raise ScmError(f"precision {j} has eigenvalue {ev:.3g} below floor {floor:.3g}")

    def to_covariances(self) -> tuple[list[np.ndarray], float]:
        """Return (Sigma_j list, mu) with Sigma_j = S_j^-1 / gamma and mu = gamma^-1/2."""
        covs = []
        for s in self.matrices:
            w, u = np.linalg.eigh(s)
            c = (u / (w * self.gamma)) @ u.T
            covs.append(0.5 * (c + c.T))
        return covs, float(self.gamma**-0.5)

    @classmethod
    def from_covariances(cls, covariances: Sequence[np.ndarray], noise_std: float) -> "PrecisionSet":
        gamma = noise_std**-2
        mats = []
        for c in covariances:
            w, u = np.linalg.eigh(np.asarray(c, dtype=float))
            s = (u / (w * gamma)) @ u.T
            mats.append(0.5 * (s + s.T))
        return cls(tuple(mats), gamma)


NEIGHBORHOODS = (4, 8)


@dataclass(frozen=True)
class ScmConfig:
    """Normalized hyperparameters and solver controls.

    The primed weights are scale-free; the solver converts them to the
    ratios actually used in the energy (see ``solver.scale_params``).
    ``max_outer_iters`` caps the abundance/endmember phase and
    ``max_inner_iters`` caps the covariance phase.
    """

    num_endmembers: int = 4
    eta: float = 0.05
    beta1_prime: float = 0.01
    beta2_prime: float = 0.0
    rho1_prime: float = 0.005
    rho2_prime: float = 0.0
    sigma0: float = 0.1
    sigma_max: float = 1.0
    neighborhood: int = 4
    max_outer_iters: int = 500
    max_inner_iters: int = 200
    energy_rel_tol: float = 1e-6
    rng_seed: int = 0
    clamp_r: bool = False
    segmentation: Optional[tuple] = None

    def __post_init__(self):
        if self.num_endmembers < 2:
            raise ScmError("num_endmembers must be >= 2")
        if not self.eta > 0:
            raise ScmError("eta must be > 0")
        for name in ("beta1_prime", "beta2_prime", "rho1_prime", "rho2_prime"):
            if not getattr(self, name) >= 0:
                raise ScmError(f"{name} must be >= 0")
        if not (self.sigma0 > 0 and self.sigma_max >= self.sigma0):
            raise ScmError("need sigma_max >= sigma0 > 0")
        if self.neighborhood not in NEIGHBORHOODS:
            raise ScmError(f"neighborhood must be 4 or 8, got {self.neighborhood}")
        if self.max_outer_iters < 1 or self.max_inner_iters < 0:
            raise ScmError("iteration caps must be positive")
        if not self.energy_rel_tol > 0:
            raise ScmError("energy_rel_tol must be > 0")
        if self.segmentation is not None:
            object.__setattr__(self, "segmentation", tuple(int(v) for v in self.segmentation))

    @classmethod
    def preset(cls, name: str, **overrides) -> "ScmConfig":
        """Named parameter sets: ``scm`` (spatial model) or ``ncm`` (no spatial/sparsity/smoothness priors)."""
        if name == "scm":
            base = dict(eta=0.05, beta1_prime=0.01, beta2_prime=0.0, rho1_prime=0.005,
                        rho2_prime=0.0, sigma0=0.1, sigma_max=1.0)
        elif name == "ncm":
            base = dict(eta=0.05, beta1_prime=0.0, beta2_prime=0.0, rho1_prime=0.005,
                        rho2_prime=0.0, sigma0=0.1, sigma_max=1.0)
        else:
            raise ScmError(f"unknown preset {name!r}; expected 'scm' or 'ncm'")
        base.update(overrides)
        return cls(**base)

    def with_(self, **changes) -> "ScmConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class ScmResult:
    endmembers: EndmemberSet
    abundances: AbundanceMatrix
    energy_trace: tuple
    covariance_trace: tuple
    diagnostics: dict
    iterations_used: int
    precisions: Optional[PrecisionSet] = None
