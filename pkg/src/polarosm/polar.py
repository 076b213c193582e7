"""Polar bird's-eye-view grid geometry shared by the scan and map branches.

The grid has ``rings`` concentric annuli of equal width out to ``max_range``
and ``sectors`` equal angular wedges starting at the positive x-axis and
running counter-clockwise.

Cartesian rasters use a fixed convention: the raster center is the query
origin, column index grows with x (east) and row index grows with y (north),
so row 0 is the southern edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PolarGrid:
    rings: int = 480
    sectors: int = 360
    max_range: float = 50.0

    def __post_init__(self):
        if self.rings <= 0 or self.sectors <= 0:
            raise ValueError(f"grid needs positive rings/sectors, got {self.rings}x{self.sectors}")
        if not self.max_range > 0:
            raise ValueError(f"max_range must be positive, got {self.max_range}")

    @property
    def ring_width(self) -> float:
        return self.max_range / self.rings

    @property
    def sector_width(self) -> float:
        return TWO_PI / self.sectors

    @property
    def shape(self) -> tuple[int, int]:
        return self.rings, self.sectors

    def ring_centers(self) -> np.ndarray:
        return (np.arange(self.rings) + 0.5) * self.ring_width

    def sector_centers(self) -> np.ndarray:
        return (np.arange(self.sectors) + 0.5) * self.sector_width


class PolarCellIndex(NamedTuple):
    u: int
    v: int


@dataclass
class CartesianRaster:
    """Multi-channel raster centered on the query origin.

    ``values`` has shape (height_px, width_px, channels).
    """

    values: np.ndarray
    resolution: float = 0.5
    origin: tuple[float, float] = field(default=(0.0, 0.0))

    def __post_init__(self):
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3 or 0 in self.values.shape:
            raise ValueError(f"raster values must be a non-empty HxWxC array, got {self.values.shape}")

    @property
    def height_px(self) -> int:
        return self.values.shape[0]

    @property
    def width_px(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def extent(self) -> tuple[float, float]:
        """(height, width) covered in meters."""
        return self.height_px * self.resolution, self.width_px * self.resolution


def cell_center(grid: PolarGrid, cell: PolarCellIndex | tuple[int, int]) -> tuple[float, float]:
    u, v = cell
    if not (0 <= u < grid.rings and 0 <= v < grid.sectors):
        raise IndexError(f"cell ({u}, {v}) outside {grid.rings}x{grid.sectors} grid")
    return (u + 0.5) * grid.ring_width, (v + 0.5) * grid.sector_width


def polar_to_cartesian(r, phi):
    """Works on scalars and arrays alike."""
    return r * np.cos(phi), r * np.sin(phi)


def azimuth(x, y):
    """atan2 mapped onto [0, 2*pi)."""
    phi = np.arctan2(y, x)
    phi = np.where(phi < 0.0, phi + TWO_PI, phi)
    # -tiny + 2*pi rounds up to exactly 2*pi
    return np.where(phi >= TWO_PI, 0.0, phi)


def polar_indices(grid: PolarGrid, x, y):
    """Vectorized inverse of the cell-center map.

    Returns ``(u, v, valid)`` integer arrays; ``valid`` is False for points at
    or beyond ``max_range``. Indices of invalid points are meaningless.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = np.hypot(x, y)
    valid = r < grid.max_range
    u = np.floor(r / grid.ring_width).astype(np.int64)
    v = np.floor(azimuth(x, y) / grid.sector_width).astype(np.int64)
    # guard the rounding edge where r is a hair below max_range
    u = np.minimum(u, grid.rings - 1)
    v = np.mod(v, grid.sectors)
    return u, v, valid


def cartesian_to_polar_index(grid: PolarGrid, x: float, y: float) -> PolarCellIndex | None:
    u, v, valid = polar_indices(grid, x, y)
    if not bool(valid):
        return None
    return PolarCellIndex(int(u), int(v))


def _continuous_pixel(raster_shape, resolution, x, y):
    h, w = raster_shape
    gx = np.asarray(x, dtype=np.float64) / resolution + w / 2.0 - 0.5
    gy = np.asarray(y, dtype=np.float64) / resolution + h / 2.0 - 0.5
    inside = (np.abs(x) <= w * resolution / 2.0) & (np.abs(y) <= h * resolution / 2.0)
    return gx, gy, inside


def bilinear_weights(raster_shape: tuple[int, int], resolution: float, x, y):
    """Gather table for bilinear sampling at metric positions (x, y).

    Returns ``(index, weight)`` arrays of shape (n, 4), where ``index`` is a
    flat row-major pixel index. Positions outside the raster footprint get
    zero weights; positions inside the footprint but beyond the outermost
    pixel centers are clamped to the edge pixels.
    """
    h, w = raster_shape
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    gx, gy, inside = _continuous_pixel(raster_shape, resolution, x, y)
    gx = np.clip(gx, 0.0, w - 1.0)
    gy = np.clip(gy, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(gx).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(gy).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = gx - x0
    fy = gy - y0
    index = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], axis=1)
    weight = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    weight[~inside] = 0.0
    index[~inside] = 0
    return index, weight


def bilinear_sample(raster: CartesianRaster, x: float, y: float) -> np.ndarray:
    """Sample all channels at one metric position; zero outside the raster."""
    h, w = raster.height_px, raster.width_px
    res = raster.resolution
    if abs(x) > w * res / 2.0 or abs(y) > h * res / 2.0:
        return np.zeros(raster.channels, dtype=np.float64)
    gx = min(max(x / res + w / 2.0 - 0.5, 0.0), w - 1.0)
    gy = min(max(y / res + h / 2.0 - 0.5, 0.0), h - 1.0)
    j0, i0 = int(math.floor(gx)), int(math.floor(gy))
    j1, i1 = min(j0 + 1, w - 1), min(i0 + 1, h - 1)
    fx, fy = gx - j0, gy - i0
    vals = raster.values.astype(np.float64)
    top = (1 - fx) * vals[i0, j0] + fx * vals[i0, j1]
    bottom = (1 - fx) * vals[i1, j0] + fx * vals[i1, j1]
    return (1 - fy) * top + fy * bottom


def cell_center_xy(grid: PolarGrid) -> tuple[np.ndarray, np.ndarray]:
    """Cartesian coordinates of every cell center, each of shape (U, V)."""
    r = grid.ring_centers()[:, None]
    phi = grid.sector_centers()[None, :]
    return polar_to_cartesian(r, phi)


def warp_weights(raster_shape: tuple[int, int], resolution: float, grid: PolarGrid):
    """Bilinear gather table from a centered raster onto every polar cell.

    Shapes are (U*V, 4); rows are in row-major (u, v) order.
    """
    x, y = cell_center_xy(grid)
    return bilinear_weights(raster_shape, resolution, x.ravel(), y.ravel())


def warp_to_polar(raster: CartesianRaster, grid: PolarGrid) -> np.ndarray:
    index, weight = warp_weights((raster.height_px, raster.width_px), raster.resolution, grid)
    flat = raster.values.reshape(-1, raster.channels).astype(np.float64)
    out = np.einsum("nk,nkc->nc", weight, flat[index])
    return out.reshape(grid.rings, grid.sectors, raster.channels)


def nearest_to_polar(values: np.ndarray, resolution: float, grid: PolarGrid) -> np.ndarray:
    """Nearest-pixel resampling of a categorical raster onto the polar grid.

    ``values`` is (H, W) or (H, W, C); cells outside the raster get 0.
    """
    squeeze = values.ndim == 2
    if squeeze:
        values = values[:, :, None]
    h, w = values.shape[:2]
    x, y = cell_center_xy(grid)
    gx, gy, inside = _continuous_pixel((h, w), resolution, x, y)
    col = np.clip(np.floor(gx + 0.5).astype(np.int64), 0, w - 1)
    row = np.clip(np.floor(gy + 0.5).astype(np.int64), 0, h - 1)
    out = values[row, col]
    out[~inside] = 0
    return out[:, :, 0] if squeeze else out
