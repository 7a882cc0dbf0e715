"""Synthetic scenes: blocky pure-material abundances, Gaussian blur, additive noise."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from scmunmix.core import AbundanceMatrix, HsiCube, ScmError, ShapeError

SNR_RANGE = (0.0, 120.0)


def bundled_spectra_path() -> Path:
    """Path of the shipped 4-material, 200-band stand-in library (synthetic curves)."""
    return Path(str(resources.files("scmunmix") / "data" / "standin_spectra.csv"))


def load_spectra_library(path) -> tuple[np.ndarray, list[str]]:
    """Read a spectra CSV: header of names, then one row per band.

    Returns the M x B matrix and the names.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ScmError(f"{path}: empty spectra file")
    names = [n.strip() for n in rows[0]]
    if not names or any(not n for n in names):
        raise ScmError(f"{path}: line 1: header must name every column")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(names):
            raise ScmError(f"{path}: line {lineno}: expected {len(names)} columns, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise ScmError(f"{path}: line {lineno}: {exc}") from exc
        for v in vals:
            if not 0.0 <= v <= 1.0:
                raise ScmError(f"{path}: line {lineno}: reflectance {v!r} outside [0, 1]")
        values.append(vals)
    if not values:
        raise ScmError(f"{path}: no band rows")
    return np.array(values).T, names


def write_spectra_library(path, spectra: np.ndarray, names) -> None:
    spectra = np.asarray(spectra, dtype=float)
    if len(names) != spectra.shape[0]:
        raise ShapeError("spectra names", spectra.shape[0], len(names))
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for band in spectra.T:
            fh.write(",".join(repr(float(v)) for v in band) + "\n")


@dataclass(frozen=True)
class SynthSpec:
    endmember_spectra: np.ndarray
    height: int = 40
    width: int = 40
    blur_sigma: float = 2.0
    snr_db: Optional[float] = 20.0   # None means noise-free
    rng_seed: int = 0

    def __post_init__(self):
        s = np.asarray(self.endmember_spectra, dtype=float)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ShapeError("endmember spectra", "M x B matrix", s.shape)
        object.__setattr__(self, "endmember_spectra", s)
        if self.height < 1 or self.width < 1:
            raise ScmError("image size must be positive")
        if self.blur_sigma < 0:
            raise ScmError("blur_sigma must be >= 0")
        if self.snr_db is not None and not (SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]):
            raise ScmError(f"snr_db must lie in [0, 120], got {self.snr_db}")

    @property
    def n_endmembers(self) -> int:
        return self.endmember_spectra.shape[0]


def region_labels(height: int, width: int, m: int) -> np.ndarray:
    """Raster-order region ids: quadrants in reading order for M = 4, else M vertical strips."""
    rows, cols = np.mgrid[0:height, 0:width]
    if m == 4:
        labels = 2 * (rows >= height // 2) + (cols >= width // 2)
    else:
        edges = np.linspace(0, width, m + 1)
        labels = np.searchsorted(edges, cols, side="right") - 1
        labels = np.clip(labels, 0, m - 1)
    return labels.ravel().astype(int)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def blur_maps(maps: np.ndarray, sigma: float) -> np.ndarray:
    """Separable normalized Gaussian blur with replicate padding; maps is (H, W, M)."""
    if sigma == 0:
        return maps.copy()
    k = gaussian_kernel(sigma)
    h, w = maps.shape[:2]
    if k.size > h or k.size > w:
        raise ScmError(f"blur kernel ({k.size} px) larger than image ({h}x{w})")
    out = ndimage.correlate1d(maps, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def generate_abundances(spec: SynthSpec) -> tuple[AbundanceMatrix, np.ndarray]:
    """One-hot region maps blurred by the Gaussian kernel; returns (A, labels)."""
    m = spec.n_endmembers
    labels = region_labels(spec.height, spec.width, m)
    onehot = np.eye(m)[labels].reshape(spec.height, spec.width, m)
    a = blur_maps(onehot, spec.blur_sigma).reshape(-1, m)
    a = np.maximum(a, 0.0)
    a /= a.sum(axis=1, keepdims=True)
    return AbundanceMatrix(a), labels


def render_cube(abundances, spectra, snr_db, seed: int, height: int, width: int
                ) -> tuple[HsiCube, float]:
    """Y = A M + noise with sigma_Y = rms(A M) * 10^(-snr/20); ``snr_db=None`` is noise-free."""
    a = abundances.values if isinstance(abundances, AbundanceMatrix) else np.asarray(abundances)
    spectra = np.asarray(spectra, dtype=float)
    if a.shape[1] != spectra.shape[0]:
        raise ShapeError("abundance columns", spectra.shape[0], a.shape[1])
    clean = a @ spectra
    if snr_db is None or math.isinf(snr_db):
        return HsiCube(height, width, spectra.shape[1], clean), 0.0
    sigma = float(np.sqrt(np.mean(clean**2)) * 10.0 ** (-snr_db / 20.0))
    rng = np.random.default_rng(seed)
    noisy = clean + rng.normal(0.0, sigma, size=clean.shape)
    return HsiCube(height, width, spectra.shape[1], noisy), sigma


@dataclass(frozen=True)
class SynthScene:
    cube: HsiCube
    abundances: AbundanceMatrix
    labels: np.ndarray
    spectra: np.ndarray
    sigma_y: float
    spec: SynthSpec


def make_scene(spec: SynthSpec) -> SynthScene:
    a, labels = generate_abundances(spec)
    cube, sigma = render_cube(a, spec.endmember_spectra, spec.snr_db, spec.rng_seed,
                              spec.height, spec.width)
    return SynthScene(cube, a, labels, spec.endmember_spectra, sigma, spec)


def interior_mask(labels: np.ndarray, height: int, width: int, margin: float) -> np.ndarray:
    """True for pixels farther than ``margin`` (Euclidean, px) from any other region.

    The outer image border does not count as a region boundary.
    """
    lab = np.asarray(labels).reshape(height, width)
    mask = np.zeros((height, width), dtype=bool)
    for k in np.unique(lab):
        inside = lab == k
        if inside.all():
            return np.ones(height * width, dtype=bool)
        dist = ndimage.distance_transform_edt(inside)
        mask |= inside & (dist > margin)
    return mask.ravel()
