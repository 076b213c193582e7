"""Tile database sampling and manifest I/O."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classes import WAYS, class_id
from .parser import OsmEntitySet
from .projection import en_to_wgs84, project_wgs84_to_en
from .raster import OsmTile, TileRasterizer

log = logging.getLogger(__name__)

# way classes originating from the OSM ``highway`` key
HIGHWAY_CLASSES = ("road", "busway", "cycleway", "path")

MANIFEST_NAME = "manifest.txt"


class LazyTiles(Sequence):
    """Tiles rendered on access; keeps large databases out of memory."""

    def __init__(self, rasterizer: TileRasterizer, centers_en: np.ndarray):
        self.rasterizer = rasterizer
        self.centers_en = centers_en

    def __len__(self):
        return len(self.centers_en)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        return self.rasterizer.render_at_en(self.centers_en[i])


@dataclass
class TileDatabase:
    tiles: Sequence[OsmTile]
    positions: np.ndarray  # (m, 2) east/north
    latlon: np.ndarray  # (m, 2)
    ids: list[str]

    def __post_init__(self):
        if not (len(self.tiles) == len(self.positions) == len(self.latlon) == len(self.ids)):
            raise ValueError("tiles, positions, latlon and ids must have equal length")

    def __len__(self):
        return len(self.positions)


def road_polylines(entities: OsmEntitySet, origin, classes=HIGHWAY_CLASSES) -> list[np.ndarray]:
    wanted = {class_id(WAYS, name) for name in classes}
    lines = []
    for way in entities.ways:
        if way.class_id in wanted:
            east, north = project_wgs84_to_en(way.coords[:, 0], way.coords[:, 1], origin)
            lines.append(np.stack([np.atleast_1d(east), np.atleast_1d(north)], axis=1))
    return lines


def arc_length_samples(polyline: np.ndarray, interval: float) -> np.ndarray:
    """Points at arc-length 0, interval, 2*interval, ... along a polyline."""
    seg = np.diff(polyline, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    count = int(np.floor(total / interval + 1e-9)) + 1
    s = np.arange(count) * interval
    s = np.minimum(s, total)
    x = np.interp(s, cum, polyline[:, 0])
    y = np.interp(s, cum, polyline[:, 1])
    return np.stack([x, y], axis=1)


def sample_tile_centers(mode: str, geometry, interval: float = 1.0) -> np.ndarray:
    """Tile centers in east/north meters.

    ``trajectory``: ``geometry`` is an (n, 2+) array of scan poses, one tile
    each. ``highway``: ``geometry`` is a list of road polylines sampled every
    ``interval`` meters of arc length; centers shared by touching polylines
    (within 1 mm) are kept once.
    """
    if mode == "trajectory":
        poses = np.asarray(geometry, dtype=np.float64)
        if poses.size == 0:
            log.warning("trajectory mode with no poses: empty tile database")
            return np.zeros((0, 2))
        return poses.reshape(len(poses), -1)[:, :2].copy()
    if mode == "highway":
        if interval <= 0:
            raise ValueError(f"interval must be positive, got {interval}")
        seen = set()
        centers = []
        for line in geometry:
            for p in arc_length_samples(np.asarray(line, dtype=np.float64), interval):
                key = (round(p[0] * 1000), round(p[1] * 1000))
                if key not in seen:
                    seen.add(key)
                    centers.append(p)
        if not centers:
            log.warning("highway mode with no road geometry: empty tile database")
            return np.zeros((0, 2))
        return np.array(centers)
    raise ValueError(f"unknown sampling mode {mode!r} (expected 'trajectory' or 'highway')")


def sample_tile_database(mode: str, entities: OsmEntitySet, origin, poses=None, interval: float = 1.0,
                         ids: list[str] | None = None, rasterizer: TileRasterizer | None = None) -> TileDatabase:
    """Sample tile centers and attach (lazily rendered) tiles."""
    if mode == "trajectory":
        if poses is None:
            raise ValueError("trajectory mode needs poses")
        geometry = poses
    else:
        geometry = road_polylines(entities, origin)
    centers = sample_tile_centers(mode, geometry, interval)
    rasterizer = rasterizer or TileRasterizer(entities, origin)
    lat, lon = en_to_wgs84(centers[:, 0], centers[:, 1], origin)
    latlon = np.stack([np.atleast_1d(lat), np.atleast_1d(lon)], axis=1).reshape(-1, 2)
    if ids is None:
        ids = [f"{k:06d}" for k in range(len(centers))]
    return TileDatabase(LazyTiles(rasterizer, centers), centers, latlon, list(ids))


def write_database(db: TileDatabase, out_dir) -> Path:
    """Write one OPTL file per tile plus the manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for tid, tile, (lat, lon), (east, north) in zip(db.ids, db.tiles, db.latlon, db.positions):
        name = f"{tid}.optl"
        tile.save(out / name)
        lines.append(" ".join([name] + [repr(float(v)) for v in (lat, lon, east, north)]))
    manifest = out / MANIFEST_NAME
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest


@dataclass
class ManifestRecord:
    filename: str
    lat: float
    lon: float
    east: float
    north: float

    @property
    def tile_id(self) -> str:
        return Path(self.filename).stem


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        records.append(ManifestRecord(parts[0], *map(float, parts[1:])))
    return records
