"""OpenStreetMap ingestion, classification, projection and tile rasterization."""

from .classes import AREAS, CHANNELS, NODES, WAYS, OsmClass, class_id, classify
from .database import (
    TileDatabase,
    read_manifest,
    sample_tile_centers,
    sample_tile_database,
    write_database,
)
from .parser import OsmEntity, OsmEntitySet, OsmParseError, parse_osm, write_osm
from .projection import EARTH_RADIUS, en_to_wgs84, project_wgs84_to_en
from .raster import TILE_PX, TILE_RESOLUTION, OsmTile, TileRasterizer, rasterize_tile

__all__ = [
    "AREAS", "CHANNELS", "NODES", "WAYS", "EARTH_RADIUS", "TILE_PX", "TILE_RESOLUTION",
    "OsmClass", "OsmEntity", "OsmEntitySet", "OsmParseError", "OsmTile", "TileDatabase",
    "TileRasterizer", "class_id", "classify", "en_to_wgs84", "parse_osm", "project_wgs84_to_en",
    "rasterize_tile", "read_manifest", "sample_tile_centers", "sample_tile_database",
    "write_database", "write_osm",
]
