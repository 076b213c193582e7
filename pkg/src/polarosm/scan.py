"""LiDAR scan ingestion, semantic labels, filtering and polar splatting."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .polar import PolarGrid, azimuth, polar_indices

# SemanticKITTI training classes; 0 is unlabeled
SEMANTIC_CLASSES = (
    "unlabeled", "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person",
    "bicyclist", "motorcyclist", "road", "parking", "sidewalk", "other-ground",
    "building", "fence", "vegetation", "trunk", "terrain", "pole", "traffic-sign",
)
NUM_SEMANTIC = len(SEMANTIC_CLASSES) - 1
LABEL = {name: k for k, name in enumerate(SEMANTIC_CLASSES)}
DYNAMIC_CLASSES = frozenset(LABEL[n] for n in ("car", "bicycle", "motorcycle", "truck", "other-vehicle",
                                                "person", "bicyclist", "motorcyclist"))

# raw SemanticKITTI label -> training class
LEARNING_MAP = {
    0: 0, 1: 0, 10: 1, 11: 2, 13: 5, 15: 3, 16: 5, 18: 4, 20: 5, 30: 6, 31: 7, 32: 8,
    40: 9, 44: 10, 48: 11, 49: 12, 50: 13, 51: 14, 52: 0, 60: 9, 70: 15, 71: 16, 72: 17,
    80: 18, 81: 19, 99: 0, 252: 1, 253: 7, 254: 6, 255: 8, 256: 5, 257: 5, 258: 4, 259: 5,
}

# coordinates fed to the point MLP are expressed in units of this many meters
COORD_SCALE = 10.0


class ScanFormatError(ValueError):
    pass


@dataclass
class LabeledScan:
    points: np.ndarray  # (N, 3) float64, sensor frame
    labels: np.ndarray  # (N,) int64 semantic classes

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.points) != len(self.labels):
            raise ScanFormatError(f"{len(self.points)} points but {len(self.labels)} labels")
        if not np.isfinite(self.points).all():
            raise ScanFormatError("scan contains non-finite coordinates")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > NUM_SEMANTIC):
            raise ScanFormatError(f"labels outside 0..{NUM_SEMANTIC}")

    def __len__(self):
        return len(self.labels)

    @property
    def planar_radius(self) -> np.ndarray:
        return np.hypot(self.points[:, 0], self.points[:, 1])

    def subset(self, keep: np.ndarray) -> "LabeledScan":
        return LabeledScan(self.points[keep], self.labels[keep])

    def rotated(self, angle: float) -> "LabeledScan":
        """Rotate about the z-axis by ``angle`` radians (counter-clockwise)."""
        c, s = np.cos(angle), np.sin(angle)
        pts = self.points.copy()
        pts[:, 0] = c * self.points[:, 0] - s * self.points[:, 1]
        pts[:, 1] = s * self.points[:, 0] + c * self.points[:, 1]
        return LabeledScan(pts, self.labels.copy())


def load_scan(path) -> np.ndarray:
    """Read a KITTI velodyne ``.bin`` file as (N, 4) float32 (x, y, z, intensity)."""
    data = Path(path).read_bytes()
    if len(data) % 16:
        raise ScanFormatError(f"{path}: {len(data)} bytes is not a multiple of 16")
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4).copy()


def save_scan(path, points: np.ndarray, intensity: np.ndarray | None = None) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rec = np.zeros((len(points), 4), dtype="<f4")
    rec[:, :3] = points
    if intensity is not None:
        rec[:, 3] = intensity
    Path(path).write_bytes(rec.tobytes())


def load_labels(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) % 4:
        raise ScanFormatError(f"{path}: {len(data)} bytes is not a multiple of 4")
    return np.frombuffer(data, dtype="<u4").copy()


def save_labels(path, labels: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(labels, dtype="<u4").tobytes())


def attach_labels(points: np.ndarray, labels, remap: bool = False) -> LabeledScan:
    """Pair points with per-point labels.

    ``labels`` is an array of raw u32 values or a path to a ``.label`` file;
    the semantic class is the low 16 bits. With ``remap`` the raw
    SemanticKITTI ids (10, 40, 50, ...) go through :data:`LEARNING_MAP`.
    """
    if isinstance(labels, (str, Path)):
        labels = load_labels(labels)
    raw = np.asarray(labels).astype(np.uint64)
    points = np.asarray(points)
    if len(raw) != len(points):
        raise ScanFormatError(f"label count {len(raw)} does not match point count {len(points)}")
    sem = (raw & 0xFFFF).astype(np.int64)
    if remap:
        lut = np.zeros(max(LEARNING_MAP) + 1, dtype=np.int64)
        for k, v in LEARNING_MAP.items():
            lut[k] = v
        unknown = sem >= len(lut)
        sem = np.where(unknown, 0, lut[np.minimum(sem, len(lut) - 1)])
    return LabeledScan(points[:, :3], sem)


def range_filter(scan: LabeledScan, r_min: float = 3.0, r_max: float = 50.0, drop_classes=None) -> LabeledScan:
    r = scan.planar_radius
    keep = (r >= r_min) & (r < r_max)
    if drop_classes:
        keep &= ~np.isin(scan.labels, list(drop_classes))
    return scan.subset(keep)


@dataclass
class PolarFeatureMap:
    values: np.ndarray  # (U, V, C)
    grid: PolarGrid


def scan_cells(scan: LabeledScan, grid: PolarGrid):
    """Flat cell index (u * V + v) per point and a validity mask."""
    u, v, valid = polar_indices(grid, scan.points[:, 0], scan.points[:, 1])
    return u * grid.sectors + v, valid


def splat_max(features: np.ndarray, scan: LabeledScan, grid: PolarGrid) -> PolarFeatureMap:
    """Per-cell element-wise max of point features; empty cells hold 0."""
    features = np.asarray(features, dtype=np.float64)
    if len(features) != len(scan):
        raise ValueError(f"{len(features)} feature rows for {len(scan)} points")
    cell, valid = scan_cells(scan, grid)
    n_cells = grid.rings * grid.sectors
    out = np.full((n_cells, features.shape[1]), -np.inf)
    np.maximum.at(out, cell[valid], features[valid])
    out[np.isneginf(out)] = 0.0
    return PolarFeatureMap(out.reshape(grid.rings, grid.sectors, -1), grid)


def mlp_inputs(scan: LabeledScan, grid: PolarGrid) -> np.ndarray:
    """(N, 4) per-point input rows for the point MLP.

    Planar coordinates are expressed in the frame of the point's own sector
    (x along the sector bisector), so rotating the scan by whole sectors
    leaves every row unchanged. Columns: x_local, y_local, z (all divided by
    :data:`COORD_SCALE`) and the class id divided by the class count.
    """
    x, y, z = scan.points.T
    r = np.hypot(x, y)
    phi = azimuth(x, y)
    _, v, _ = polar_indices(grid, x, y)
    delta = phi - (v + 0.5) * grid.sector_width
    out = np.stack([r * np.cos(delta), r * np.sin(delta), z, np.zeros_like(z)], axis=1) / COORD_SCALE
    out[:, 3] = scan.labels / NUM_SEMANTIC
    return out
