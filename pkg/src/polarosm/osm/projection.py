"""Local East-North tangent-plane projection around a fixed origin."""

from __future__ import annotations

import numpy as np

EARTH_RADIUS = 6_378_137.0


def project_wgs84_to_en(lat, lon, origin):
    """Equirectangular projection of (lat, lon) degrees to (east, north) meters."""
    lat0, lon0 = origin
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    east = EARTH_RADIUS * np.cos(np.radians(lat0)) * np.radians(lon - lon0)
    north = EARTH_RADIUS * np.radians(lat - lat0)
    if east.ndim == 0:
        return float(east), float(north)
    return east, north


def en_to_wgs84(east, north, origin):
    """Inverse of :func:`project_wgs84_to_en`."""
    lat0, lon0 = origin
    east = np.asarray(east, dtype=np.float64)
    north = np.asarray(north, dtype=np.float64)
    lat = lat0 + np.degrees(north / EARTH_RADIUS)
    lon = lon0 + np.degrees(east / (EARTH_RADIUS * np.cos(np.radians(lat0))))
    if lat.ndim == 0:
        return float(lat), float(lon)
    return lat, lon
