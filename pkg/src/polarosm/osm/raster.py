"""Rasterization of classified OSM entities into 3-channel semantic tiles."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..polar import CartesianRaster
from .classes import AREAS, CHANNELS, NODES, WAYS
from .parser import OsmEntitySet
from .projection import en_to_wgs84, project_wgs84_to_en

log = logging.getLogger(__name__)

TILE_PX = 200
TILE_RESOLUTION = 0.5

TILE_MAGIC = b"OPTL"
TILE_VERSION = 1
_TILE_HEADER = struct.Struct("<4sIddHHf")


@dataclass
class OsmTile:
    """Semantic tile; ``values`` is (H, W, 3) uint16 class ids, row 0 = south edge."""

    center: tuple[float, float]
    values: np.ndarray
    resolution: float = TILE_RESOLUTION
    warnings: list[str] = field(default_factory=list, compare=False, repr=False)

    @property
    def areas(self) -> np.ndarray:
        return self.values[:, :, 0]

    @property
    def ways(self) -> np.ndarray:
        return self.values[:, :, 1]

    @property
    def nodes(self) -> np.ndarray:
        return self.values[:, :, 2]

    def raster(self) -> CartesianRaster:
        return CartesianRaster(self.values.astype(np.float64), self.resolution)

    def to_bytes(self) -> bytes:
        h, w, _ = self.values.shape
        header = _TILE_HEADER.pack(TILE_MAGIC, TILE_VERSION, self.center[0], self.center[1], h, w, self.resolution)
        planes = np.ascontiguousarray(self.values.transpose(2, 0, 1), dtype="<u2")
        return header + planes.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "OsmTile":
        if len(data) < _TILE_HEADER.size:
            raise ValueError("tile file truncated in header")
        magic, version, lat, lon, h, w, res = _TILE_HEADER.unpack_from(data)
        if magic != TILE_MAGIC:
            raise ValueError(f"not a tile file (magic {magic!r})")
        if version != TILE_VERSION:
            raise ValueError(f"unsupported tile version {version}")
        body = data[_TILE_HEADER.size:]
        if len(body) != 3 * h * w * 2:
            raise ValueError(f"tile body has {len(body)} bytes, expected {3 * h * w * 2}")
        planes = np.frombuffer(body, dtype="<u2").reshape(3, h, w)
        return cls((lat, lon), planes.transpose(1, 2, 0).astype(np.uint16), float(res))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "OsmTile":
        return cls.from_bytes(Path(path).read_bytes())


def fill_polygon(canvas: np.ndarray, poly: np.ndarray, value: int) -> None:
    """Even-odd scanline fill sampled at pixel centers.

    ``poly`` holds vertices in continuous pixel coordinates (x along columns,
    y along rows) where pixel (i, j) has its center at (j + 0.5, i + 0.5).
    """
    h, w = canvas.shape
    xa, ya = poly[:, 0], poly[:, 1]
    xb, yb = np.roll(xa, -1), np.roll(ya, -1)
    row_lo = max(int(np.floor(ya.min() - 0.5)), 0)
    row_hi = min(int(np.ceil(ya.max() + 0.5)), h)
    col_lo = max(int(np.floor(xa.min() - 0.5)), 0)
    col_hi = min(int(np.ceil(xa.max() + 0.5)), w)
    if row_lo >= row_hi or col_lo >= col_hi:
        return
    py = np.arange(row_lo, row_hi) + 0.5
    px = np.arange(col_lo, col_hi) + 0.5
    crosses = (ya[None, :] > py[:, None]) != (yb[None, :] > py[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = xa[None, :] + (py[:, None] - ya[None, :]) * (xb - xa)[None, :] / (yb - ya)[None, :]
    xint = np.where(crosses, xint, -np.inf)
    count = (xint[:, :, None] > px[None, None, :]).sum(axis=1)
    inside = (count % 2) == 1
    canvas[row_lo:row_hi, col_lo:col_hi][inside] = value


def _clip_segment(x0, y0, x1, y1, lo_x, lo_y, hi_x, hi_y):
    """Liang-Barsky clip; returns None when the segment misses the box."""
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - lo_x), (dx, hi_x - x0), (-dy, y0 - lo_y), (dy, hi_y - y0)):
        if p == 0:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None
    return x0 + t0 * dx, y0 + t0 * dy, x0 + t1 * dx, y0 + t1 * dy


def draw_line(canvas: np.ndarray, x0: float, y0: float, x1: float, y1: float, value: int) -> None:
    """1-pixel Bresenham stroke between two continuous pixel positions."""
    h, w = canvas.shape
    clipped = _clip_segment(x0, y0, x1, y1, -1.0, -1.0, w + 1.0, h + 1.0)
    if clipped is None:
        return
    j0, i0, j1, i1 = (int(np.floor(c)) for c in clipped)
    dj, di = abs(j1 - j0), -abs(i1 - i0)
    sj = 1 if j0 < j1 else -1
    si = 1 if i0 < i1 else -1
    err = dj + di
    while True:
        if 0 <= i0 < h and 0 <= j0 < w:
            canvas[i0, j0] = value
        if j0 == j1 and i0 == i1:
            break
        e2 = 2 * err
        if e2 >= di:
            err += di
            j0 += sj
        if e2 <= dj:
            err += dj
            i0 += si


@dataclass
class _Projected:
    class_id: int
    xy: np.ndarray  # (n, 2) east/north
    lo: np.ndarray
    hi: np.ndarray


class TileRasterizer:
    """Projects an entity set once and renders tiles at arbitrary centers."""

    def __init__(self, entities: OsmEntitySet, origin, size_px: int = TILE_PX, resolution: float = TILE_RESOLUTION):
        self.origin = tuple(origin)
        self.size_px = size_px
        self.resolution = resolution
        self.layers: dict[str, list[_Projected]] = {}
        self.warnings: list[str] = []
        for channel in CHANNELS:
            items = []
            for k, ent in enumerate(entities.channel(channel)):
                coords = np.asarray(ent.coords, dtype=np.float64)
                east, north = project_wgs84_to_en(coords[:, 0], coords[:, 1], self.origin)
                xy = np.stack([np.atleast_1d(east), np.atleast_1d(north)], axis=1)
                if channel == AREAS:
                    ring = xy[:-1] if len(xy) > 1 and np.array_equal(xy[0], xy[-1]) else xy
                    if len(np.unique(ring, axis=0)) < 3:
                        msg = f"area #{k} ({ent.name}) has fewer than 3 distinct vertices, skipped"
                        self.warnings.append(msg)
                        log.warning(msg)
                        continue
                    xy = ring
                items.append(_Projected(ent.class_id, xy, xy.min(axis=0), xy.max(axis=0)))
            self.layers[channel] = items

    @property
    def half_extent(self) -> float:
        return self.size_px * self.resolution / 2.0

    def render_en(self, center_en) -> np.ndarray:
        """(H, W, 3) uint16 class-id planes for a tile centered at ``center_en``."""
        ce, cn = float(center_en[0]), float(center_en[1])
        n, res = self.size_px, self.resolution
        half = self.half_extent + res
        out = np.zeros((n, n, 3), dtype=np.uint16)
        box_lo = np.array([ce - half, cn - half])
        box_hi = np.array([ce + half, cn + half])
        for c, channel in enumerate(CHANNELS):
            canvas = out[:, :, c]
            for item in self.layers[channel]:
                if np.any(item.hi < box_lo) or np.any(item.lo > box_hi):
                    continue
                px = (item.xy[:, 0] - ce) / res + n / 2.0
                py = (item.xy[:, 1] - cn) / res + n / 2.0
                if channel == AREAS:
                    fill_polygon(canvas, np.stack([px, py], axis=1), item.class_id)
                elif channel == WAYS:
                    if len(px) == 1:
                        draw_line(canvas, px[0], py[0], px[0], py[0], item.class_id)
                    for k in range(len(px) - 1):
                        draw_line(canvas, px[k], py[k], px[k + 1], py[k + 1], item.class_id)
                else:
                    j, i = int(np.floor(px[0])), int(np.floor(py[0]))
                    if 0 <= i < n and 0 <= j < n:
                        canvas[i, j] = item.class_id
        return out

    def render(self, center_latlon) -> OsmTile:
        center_en = project_wgs84_to_en(center_latlon[0], center_latlon[1], self.origin)
        return OsmTile(tuple(map(float, center_latlon)), self.render_en(center_en), self.resolution, list(self.warnings))

    def render_at_en(self, center_en) -> OsmTile:
        lat, lon = en_to_wgs84(center_en[0], center_en[1], self.origin)
        return OsmTile((lat, lon), self.render_en(center_en), self.resolution, list(self.warnings))


def rasterize_tile(entities: OsmEntitySet, center, origin, size_px: int = TILE_PX,
                   resolution: float = TILE_RESOLUTION) -> OsmTile:
    """Render one tile centered at ``center`` (lat, lon)."""
    return TileRasterizer(entities, origin, size_px, resolution).render(center)
