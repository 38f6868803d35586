"""Regularization filters on structured element grids.

Linear filters are stored as row-normalized sparse matrices so that
``filtered = H @ field`` and the chain rule is ``H.T @ gradient``.
Weights near the domain boundary are renormalized over the neighbors that
exist, so uniform fields pass through unchanged.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from ._validation import check_field
from .model import FilterConfig, GridSpec


def neighbor_offsets(radius: float, ndim: int) -> np.ndarray:
    """Integer offsets within Euclidean distance ``radius`` (the discrete disk or ball)."""
    reach = int(math.floor(radius + 1e-12))
    axes = [np.arange(-reach, reach + 1)] * ndim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ndim)
    dist = np.sqrt((grid**2).sum(axis=1))
    return grid[dist <= radius + 1e-12]


@dataclass(frozen=True)
class FilterKernel:
    kind: str
    radius: float
    grid: GridSpec
    matrix: Optional[sp.csr_matrix] = None
    footprint: Optional[np.ndarray] = None
    residual: Optional["FilterKernel"] = None

    @property
    def is_identity(self) -> bool:
        return self.kind == "none" or (self.matrix is not None and self.matrix.nnz == self.grid.n_elements
                                        and self.residual is None and self.footprint is None)


def _element_coords(grid: GridSpec) -> np.ndarray:
    # storage order (nz, nx, ny) -> coordinates (x, y[, z])
    idx = np.indices(grid.shape).reshape(len(grid.shape), -1)
    if grid.ndim == 2:
        return idx.T
    return np.stack([idx[1], idx[2], idx[0]], axis=1)


def _linear_filter_matrix(grid: GridSpec, offsets, weights) -> sp.csr_matrix:
    coords = _element_coords(grid)
    dims = np.array([grid.nx, grid.ny, grid.nz][: grid.ndim])
    n = grid.n_elements
    rows, cols, vals = [], [], []
    for off, w in zip(offsets, weights):
        target = coords + off
        inside = np.all((target >= 0) & (target < dims), axis=1)
        t = target[inside]
        if grid.ndim == 2:
            col = t[:, 0] * grid.ny + t[:, 1]
        else:
            col = t[:, 2] * grid.nx * grid.ny + t[:, 0] * grid.ny + t[:, 1]
        rows.append(np.flatnonzero(inside))
        cols.append(col)
        vals.append(np.full(inside.sum(), w))
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    H.sum_duplicates()
    H.sort_indices()
    row_sums = np.asarray(H.sum(axis=1)).ravel()
    return sp.diags(1.0 / row_sums) @ H


@functools.lru_cache(maxsize=32)
def make_kernel(grid: GridSpec, kind: str, radius: float, sigma_ratio: float = 0.5,
                truncation_ratio: float = 1.0, close_composite: bool = True) -> FilterKernel:
    """Build a filter kernel for ``grid``.

    ``gaussian``: weights ``exp(-d^2 / (2 sigma^2))`` with ``sigma =
    sigma_ratio * radius``, truncated at ``truncation_ratio * radius``.
    ``hat``: weights ``max(0, radius - d)``. ``close``: grayscale closing
    with the discrete disk/ball of ``floor(radius)``; with
    ``close_composite`` a fractional remainder is applied afterwards as a
    Gaussian of that remainder radius.
    """
    if radius < 0:
        raise ValueError(f"filter radius must be >= 0, got {radius}")
    ndim = grid.ndim
    if kind == "none" or radius == 0:
        return FilterKernel("none", radius, grid, sp.identity(grid.n_elements, format="csr"))
    if kind == "gaussian":
        offsets = neighbor_offsets(truncation_ratio * radius, ndim)
        sigma = sigma_ratio * radius
        d2 = (offsets**2).sum(axis=1)
        weights = np.exp(-d2 / (2 * sigma**2))
    elif kind == "hat":
        offsets = neighbor_offsets(radius, ndim)
        weights = radius - np.sqrt((offsets**2).sum(axis=1))
        keep = weights > 0
        offsets, weights = offsets[keep], weights[keep]
    elif kind == "close":
        whole = math.floor(radius + 1e-12)
        footprint_offsets = neighbor_offsets(whole, ndim)
        size = 2 * whole + 1
        footprint = np.zeros((size,) * ndim, dtype=bool)
        footprint[tuple((footprint_offsets + whole).T)] = True
        residual = None
        remainder = radius - whole
        if close_composite and remainder > 1e-12:
            residual = make_kernel(grid, "gaussian", remainder, sigma_ratio, truncation_ratio)
        return FilterKernel("close", radius, grid, footprint=footprint, residual=residual)
    else:
        raise ValueError(f"unknown filter kind {kind!r}")
    return FilterKernel(kind, radius, grid, _linear_filter_matrix(grid, offsets, weights))


def density_kernel(grid: GridSpec, config: FilterConfig) -> FilterKernel:
    return make_kernel(grid, config.density_kind, config.density_radius,
                       config.sigma_ratio, config.truncation_ratio)


def sensitivity_kernel(grid: GridSpec, config: FilterConfig) -> FilterKernel:
    return make_kernel(grid, config.sensitivity_kind, config.sensitivity_radius,
                       config.sigma_ratio, config.truncation_ratio, config.close_composite)


def gaussian_filter(field, kernel: FilterKernel) -> np.ndarray:
    """Apply a linear (Gaussian, hat or identity) kernel."""
    if kernel.matrix is None:
        raise ValueError(f"{kernel.kind} kernel is not linear")
    field = check_field(field, kernel.grid.n_elements)
    return kernel.matrix @ field


def filter_density(x, kernel: FilterKernel) -> np.ndarray:
    """Physical densities seen by the analysis."""
    if kernel.kind == "close":
        return morph_close(x, kernel)
    # a convex combination of bounded values, up to rounding
    return np.clip(gaussian_filter(x, kernel), 0.0, 1.0)


def _dilate(values, footprint):
    return ndi.maximum_filter(values, footprint=footprint, mode="constant", cval=-np.inf)


def _erode(values, footprint):
    return ndi.minimum_filter(values, footprint=footprint, mode="constant", cval=np.inf)


def dilate(field, kernel: FilterKernel) -> np.ndarray:
    arr = check_field(field, kernel.grid.n_elements).reshape(kernel.grid.shape)
    return _dilate(arr, _storage_footprint(kernel)).ravel()


def erode(field, kernel: FilterKernel) -> np.ndarray:
    arr = check_field(field, kernel.grid.n_elements).reshape(kernel.grid.shape)
    return _erode(arr, _storage_footprint(kernel)).ravel()


def _storage_footprint(kernel):
    if kernel.footprint is None:
        raise ValueError("kernel has no structuring element")
    # the disk/ball is symmetric under axis permutation, so storage order is irrelevant
    return kernel.footprint


def morph_close(field, kernel: FilterKernel) -> np.ndarray:
    """Grayscale closing: dilation (max) then erosion (min) over the
    structuring element, ignoring cells outside the grid."""
    arr = check_field(field, kernel.grid.n_elements).reshape(kernel.grid.shape)
    fp = _storage_footprint(kernel)
    closed = _erode(_dilate(arr, fp), fp).ravel()
    if kernel.residual is not None:
        closed = kernel.residual.matrix @ closed
    return closed


def filter_sensitivity(gradient, x, sens_kernel: FilterKernel,
                       dens_kernel: Optional[FilterKernel] = None) -> np.ndarray:
    """Gradient with respect to the design variables, smoothed.

    ``gradient`` is taken with respect to the physical densities. The chain
    rule of a linear density filter is applied first, then the sensitivity
    kernel: a plain smoothing for ``gaussian``, the density-weighted
    heuristic of the 88-line code for ``hat``, and a closing of the
    min-max normalized field for ``close``.
    """
    grid = sens_kernel.grid
    g = check_field(gradient, grid.n_elements, "gradient")
    x = check_field(x, grid.n_elements, "density")
    if dens_kernel is not None and dens_kernel.kind != "none":
        if dens_kernel.matrix is None:
            raise ValueError("the density filter must be linear to apply its chain rule")
        g = dens_kernel.matrix.T @ g
    kind = sens_kernel.kind
    if kind == "none":
        return g
    if kind == "gaussian":
        return sens_kernel.matrix @ g
    if kind == "hat":
        return (sens_kernel.matrix @ (x * g)) / np.maximum(1e-3, x)
    # closing acts on the improvement field -g, filling narrow valleys of it
    h = -g
    lo, hi = h.min(), h.max()
    if hi - lo == 0:
        return g.copy()
    return -(lo + (hi - lo) * morph_close((h - lo) / (hi - lo), sens_kernel))
