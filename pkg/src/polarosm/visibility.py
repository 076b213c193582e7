"""Deterministic visibility masks for the scan and map branches.

Both masks are (U, V) uint8 arrays over the polar grid; within every sector
the visible cells form a prefix of rings.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .osm.classes import AREAS, class_id
from .polar import PolarGrid, nearest_to_polar, polar_indices
from .scan import LabeledScan

BUILDING_ID = class_id(AREAS, "building")


def last_return_per_sector(scan: LabeledScan, grid: PolarGrid) -> np.ndarray:
    """Largest planar range per sector; -inf where a sector has no points."""
    x, y = scan.points[:, 0], scan.points[:, 1]
    u, v, valid = polar_indices(grid, x, y)
    r = np.hypot(x, y)
    r_last = np.full(grid.sectors, -np.inf)
    np.maximum.at(r_last, v[valid], r[valid])
    return r_last


def lidar_visibility_mask(scan: LabeledScan, grid: PolarGrid, empty_sector_visible: bool = False) -> np.ndarray:
    """Cells up to the last return of each sector are visible.

    Sectors without returns are fully occluded unless ``empty_sector_visible``.
    """
    r_last = last_return_per_sector(scan, grid)
    mask = grid.ring_centers()[:, None] <= r_last[None, :]
    if empty_sector_visible:
        mask[:, np.isneginf(r_last)] = True
    return mask.astype(np.uint8)


def osm_visibility_mask(areas_polar: np.ndarray, building_id: int = BUILDING_ID) -> np.ndarray:
    """Cells beyond the first building ring of each sector are occluded.

    ``areas_polar`` is the (U, V) areas channel on the polar grid, or a
    (U, V, 3) class-id array whose channel 0 is used.
    """
    if areas_polar.ndim == 3:
        areas_polar = areas_polar[:, :, 0]
    rings = areas_polar.shape[0]
    building = areas_polar == building_id
    first = np.where(building.any(axis=0), building.argmax(axis=0), rings)
    return (np.arange(rings)[:, None] <= first[None, :]).astype(np.uint8)


def tile_visibility_mask(tile_values: np.ndarray, resolution: float, grid: PolarGrid) -> np.ndarray:
    """Map-branch mask straight from a Cartesian tile (nearest-class resampling)."""
    areas = tile_values[:, :, 0] if tile_values.ndim == 3 else tile_values
    return osm_visibility_mask(nearest_to_polar(areas, resolution, grid))


def write_mask_pgm(path, mask: np.ndarray) -> None:
    """Binary PGM with maxval 1: one byte per cell, U rows by V columns."""
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    rows, cols = mask.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n1\n".encode() + mask.tobytes())


def read_mask_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, dims, maxval, body = data.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    cols, rows = map(int, dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(rows, cols).copy()
