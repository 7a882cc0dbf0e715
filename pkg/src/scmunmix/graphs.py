"""Laplacian builders for the abundance, endmember and wavelength priors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from scmunmix.core import HsiCube, ScmError, ShapeError


def grid_edges(height: int, width: int, neighborhood: int = 4) -> np.ndarray:
    """Return the (E, 2) array of undirected grid edges, i < j, in raster order.

    Pixel index is ``row * width + col``.
    """
    if neighborhood not in (4, 8):
        raise ScmError(f"neighborhood must be 4 or 8, got {neighborhood}")
    idx = np.arange(height * width).reshape(height, width)
    # offsets pointing "forward" in raster order so each edge appears once
    offsets = [(0, 1), (1, 0)]
    if neighborhood == 8:
        offsets += [(1, 1), (1, -1)]
    parts = []
    for dr, dc in offsets:
        r0, r1 = 0, height - dr
        c0, c1 = max(0, -dc), width - max(0, dc)
        src = idx[r0:r1, c0:c1]
        dst = idx[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        parts.append(np.stack([src.ravel(), dst.ravel()], axis=1))
    edges = np.concatenate(parts) if parts else np.empty((0, 2), dtype=int)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


def laplacian_from_edges(n: int, edges: np.ndarray, weights: np.ndarray) -> sp.csr_matrix:
    """Assemble D - W from a symmetric edge list; the diagonal is the sum of stored weights."""
    i, j = edges[:, 0], edges[:, 1]
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    vals = np.concatenate([weights, weights])
    w = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    deg = np.asarray(w.sum(axis=1)).ravel()
    lap = (sp.diags(deg) - w).tocsr()
    lap.sort_indices()
    return lap


@dataclass(frozen=True)
class PriorGraphs:
    """The three Laplacians: spatial L (sparse N x N), endmember H (M x M), wavelength G (B x B)."""

    spatial: sp.csr_matrix
    endmember: np.ndarray
    wavelength: sp.csr_matrix


def build_spatial_laplacian(cube: HsiCube, eta: float, neighborhood: int = 4,
                            segmentation=None) -> sp.csr_matrix:
    """Weighted grid Laplacian for the abundance smoothness prior.

    Neighbouring pixels get weight ``exp(-|y_i - y_j|^2 / (2 B eta^2))``, or,
    when a segmentation is given, 1 for same-label neighbours and 0 otherwise.
    """
    n = cube.n_pixels
    if n < 2:
        raise ScmError("graph needs at least 2 pixels")
    if not eta > 0:
        raise ScmError("eta must be > 0")
    edges = grid_edges(cube.height, cube.width, neighborhood)
    if segmentation is not None:
        labels = np.asarray(segmentation)
        if labels.shape != (n,):
            raise ShapeError("segmentation labels", (n,), labels.shape)
        weights = (labels[edges[:, 0]] == labels[edges[:, 1]]).astype(float)
    else:
        y = cube.data
        d2 = np.sum((y[edges[:, 0]] - y[edges[:, 1]]) ** 2, axis=1)
        weights = np.exp(-d2 / (2.0 * cube.bands * eta**2))
    return laplacian_from_edges(n, edges, weights)


def build_endmember_laplacian(m: int) -> np.ndarray:
    """Complete-graph Laplacian: M-1 on the diagonal, -1 elsewhere."""
    if m < 2:
        raise ScmError(f"endmember Laplacian needs M >= 2, got {m}")
    return m * np.eye(m) - np.ones((m, m))


def build_wavelength_laplacian(b: int) -> sp.csr_matrix:
    """Chain Laplacian over adjacent bands (tridiagonal)."""
    if b < 2:
        raise ScmError(f"wavelength Laplacian needs B >= 2, got {b}")
    diag = np.full(b, 2.0)
    diag[0] = diag[-1] = 1.0
    off = -np.ones(b - 1)
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def build_graphs(cube: HsiCube, m: int, eta: float, neighborhood: int = 4,
                 segmentation=None) -> PriorGraphs:
    return PriorGraphs(
        spatial=build_spatial_laplacian(cube, eta, neighborhood, segmentation),
        endmember=build_endmember_laplacian(m),
        # a single band has no neighbours; the smoothness term vanishes
        wavelength=(build_wavelength_laplacian(cube.bands) if cube.bands > 1
                    else sp.csr_matrix((1, 1))),
    )
