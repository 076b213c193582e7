"""Seeded synthetic towns, 2D ray-cast LiDAR scans and matching OSM entities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, Point, Polygon, box

from .osm.classes import AREAS, NODES, WAYS, class_id
from .osm.parser import OsmEntity, OsmEntitySet
from .osm.projection import en_to_wgs84
from .scan import LABEL, LabeledScan

SYNTH_ORIGIN = (48.137, 11.575)
POLE_RADIUS = 0.15
FOREST_RADIUS = 4.0
MIN_BUILDING_SIDE = 2.0

Z_RANGE = {"building": (0.0, 8.0), "vegetation": (0.0, 3.0), "pole": (0.0, 4.0)}


class WorldConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldParams:
    size: float = 300.0  # side of the square world, meters, centered on the origin
    road_density: float = 13.0  # grid roads per km along each axis
    road_jitter: float = 8.0
    road_width: float = 8.0
    building_density: float = 12.0  # expected buildings per hectare
    vegetation_density: float = 8.0  # per hectare
    pole_density: float = 4.0  # per hectare
    max_attempts: int = 500  # placement retries per object before giving up

    def __post_init__(self):
        for name in ("size", "road_density", "building_density", "vegetation_density", "pole_density"):
            if getattr(self, name) < 0:
                raise WorldConfigError(f"{name} must be non-negative")
        if self.size <= 0:
            raise WorldConfigError("size must be positive")

    @property
    def hectares(self) -> float:
        return self.size * self.size / 1e4


@dataclass
class Building:
    center: tuple[float, float]
    extent: tuple[float, float]  # full side lengths along the local x / y axes
    yaw: float

    def corners(self) -> np.ndarray:
        hx, hy = self.extent[0] / 2, self.extent[1] / 2
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return local @ np.array([[c, s], [-s, c]]) + np.asarray(self.center)

    def polygon(self) -> Polygon:
        return Polygon(self.corners())


@dataclass
class Road:
    points: np.ndarray  # (n, 2) polyline
    width: float


@dataclass
class SynthWorld:
    bounds: tuple[float, float, float, float]
    buildings: list[Building] = field(default_factory=list)
    roads: list[Road] = field(default_factory=list)
    vegetation: list[tuple[tuple[float, float], float]] = field(default_factory=list)
    poles: list[tuple[float, float]] = field(default_factory=list)

    def dump(self) -> str:
        """One geometry per line, floats in round-trippable form."""
        f = lambda v: repr(float(v))  # noqa: E731
        lines = ["bounds " + " ".join(map(f, self.bounds))]
        for r in self.roads:
            lines.append("road " + f(r.width) + " " + " ".join(f(v) for v in np.asarray(r.points).ravel()))
        for b in self.buildings:
            lines.append("building " + " ".join(map(f, (*b.center, *b.extent, b.yaw))))
        for (x, y), rad in self.vegetation:
            lines.append("vegetation " + " ".join(map(f, (x, y, rad))))
        for x, y in self.poles:
            lines.append("pole " + f(x) + " " + f(y))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dump(cls, text: str) -> "SynthWorld":
        world = None
        for line in text.splitlines():
            if not line.strip():
                continue
            kind, *vals = line.split()
            v = [float(x) for x in vals]
            if kind == "bounds":
                world = cls(tuple(v))
            elif kind == "road":
                world.roads.append(Road(np.array(v[1:]).reshape(-1, 2), v[0]))
            elif kind == "building":
                world.buildings.append(Building((v[0], v[1]), (v[2], v[3]), v[4]))
            elif kind == "vegetation":
                world.vegetation.append(((v[0], v[1]), v[2]))
            elif kind == "pole":
                world.poles.append((v[0], v[1]))
            else:
                raise ValueError(f"unknown world record {kind!r}")
        if world is None:
            raise ValueError("world dump has no bounds line")
        return world


# -- generation ------------------------------------------------------------------


def _grid_roads(params: WorldParams, rng: np.random.Generator) -> list[Road]:
    if params.road_density <= 0:
        return []
    half = params.size / 2
    count = max(1, int(round(params.road_density * params.size / 1000.0)))
    pitch = params.size / count
    roads = []
    for axis in (0, 1):
        for k in range(count):
            base = -half + (k + 0.5) * pitch
            offs = np.clip(base + rng.uniform(-params.road_jitter, params.road_jitter, 3), -half + 1, half - 1)
            along = np.array([-half, 0.0, half])
            pts = np.stack([offs, along], axis=1) if axis == 0 else np.stack([along, offs], axis=1)
            roads.append(Road(pts, params.road_width))
    return roads


class _Placer:
    """Collision bookkeeping for rejection sampling."""

    def __init__(self, bounds, max_attempts):
        self.area = box(*bounds)
        self.shapes = []
        self.max_attempts = max_attempts

    def fits(self, geom, clearance=0.0) -> bool:
        if not self.area.contains(geom):
            return False
        probe = geom.buffer(clearance) if clearance else geom
        return not any(probe.intersects(s) for s in self.shapes)

    def place(self, propose, what: str, clearance=0.0):
        for _ in range(self.max_attempts):
            item, geom = propose()
            if self.fits(geom, clearance):
                self.shapes.append(geom)
                return item
        raise WorldConfigError(f"could not place {what} within {self.max_attempts} attempts; lower the density")


def _point_on_roads(roads: list[Road], rng: np.random.Generator):
    """Uniform point by arc length; returns (xy, unit tangent)."""
    segs = [(r.points[k], r.points[k + 1]) for r in roads for k in range(len(r.points) - 1)]
    lengths = np.array([np.linalg.norm(b - a) for a, b in segs])
    k = rng.choice(len(segs), p=lengths / lengths.sum())
    a, b = segs[k]
    t = rng.uniform()
    tangent = (b - a) / lengths[k]
    return a + t * (b - a), tangent


def generate_world(seed: int, params: WorldParams = WorldParams()) -> SynthWorld:
    rng = np.random.default_rng(seed)
    half = params.size / 2
    world = SynthWorld((-half, -half, half, half))
    world.roads = _grid_roads(params, rng)
    placer = _Placer(world.bounds, params.max_attempts)
    placer.shapes.extend(LineString(r.points).buffer(r.width / 2) for r in world.roads)

    def propose_building():
        frontage, depth = rng.uniform(6.0, 24.0), rng.uniform(6.0, 18.0)
        if world.roads:
            p, t = _point_on_roads(world.roads, rng)
            normal = np.array([-t[1], t[0]]) * rng.choice([-1.0, 1.0])
            setback = params.road_width / 2 + rng.uniform(1.0, 8.0) + depth / 2
            center = p + normal * setback
            yaw = float(np.arctan2(t[1], t[0]))
        else:
            center = rng.uniform(-half, half, 2)
            yaw = float(rng.uniform(0, np.pi))
        b = Building((float(center[0]), float(center[1])), (float(frontage), float(depth)), yaw)
        return b, b.polygon()

    def propose_vegetation():
        center = rng.uniform(-half, half, 2)
        radius = float(rng.uniform(0.8, 6.0))
        return ((float(center[0]), float(center[1])), radius), Point(center).buffer(radius, 16)

    def propose_pole():
        if world.roads:
            p, t = _point_on_roads(world.roads, rng)
            normal = np.array([-t[1], t[0]]) * rng.choice([-1.0, 1.0])
            xy = p + normal * (params.road_width / 2 + rng.uniform(0.3, 1.5))
        else:
            xy = rng.uniform(-half, half, 2)
        return (float(xy[0]), float(xy[1])), Point(xy).buffer(POLE_RADIUS, 8)

    for _ in range(rng.poisson(params.building_density * params.hectares)):
        world.buildings.append(placer.place(propose_building, "building", clearance=1.0))
    for _ in range(rng.poisson(params.vegetation_density * params.hectares)):
        world.vegetation.append(placer.place(propose_vegetation, "vegetation", clearance=0.5))
    for _ in range(rng.poisson(params.pole_density * params.hectares)):
        world.poles.append(placer.place(propose_pole, "pole", clearance=0.3))
    return world


def road_poses(world: SynthWorld, n: int, seed: int, lateral: float = 2.0, yaw_noise: float = np.radians(3.0),
               margin: float = 0.0) -> np.ndarray:
    """(n, 3) east/north/yaw poses on roads, heading along the road in either direction."""
    if not world.roads:
        raise WorldConfigError("road poses need at least one road")
    rng = np.random.default_rng(seed)
    lo, hi = np.array(world.bounds[:2]) + margin, np.array(world.bounds[2:]) - margin
    out = []
    while len(out) < n:
        p, t = _point_on_roads(world.roads, rng)
        normal = np.array([-t[1], t[0]])
        xy = p + normal * rng.uniform(-lateral, lateral)
        if np.any(xy < lo) or np.any(xy > hi):
            continue
        heading = np.arctan2(t[1], t[0]) + (np.pi if rng.uniform() < 0.5 else 0.0)
        yaw = (heading + rng.normal(0.0, yaw_noise)) % (2 * np.pi)
        out.append((xy[0], xy[1], yaw))
    return np.array(out)


# -- ray casting -------------------------------------------------------------------


def _segments(world: SynthWorld):
    if not world.buildings:
        return np.zeros((0, 2)), np.zeros((0, 2))
    corners = np.stack([b.corners() for b in world.buildings])
    return corners.reshape(-1, 2), np.roll(corners, -1, axis=1).reshape(-1, 2)


def _circles(world: SynthWorld):
    centers = [c for c, _ in world.vegetation] + list(world.poles)
    radii = [r for _, r in world.vegetation] + [POLE_RADIUS] * len(world.poles)
    kinds = ["vegetation"] * len(world.vegetation) + ["pole"] * len(world.poles)
    return np.array(centers, dtype=np.float64).reshape(-1, 2), np.array(radii, dtype=np.float64), kinds


def cast_rays(world: SynthWorld, origin, directions: np.ndarray, max_range: float = np.inf):
    """First intersection range and object kind per ray (inf / None for misses)."""
    origin = np.asarray(origin, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 2)
    best = np.full(len(d), np.inf)
    kind = np.full(len(d), None, dtype=object)

    a, b = _segments(world)
    if len(a):
        near = (np.minimum(np.linalg.norm(a - origin, axis=1), np.linalg.norm(b - origin, axis=1))
                <= max_range + np.linalg.norm(b - a, axis=1))
        a, b = a[near], b[near]
    if len(a):
        e = b - a
        w = a - origin
        denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]) / denom
            s = (w[None, :, 0] * d[:, None, 1] - w[None, :, 1] * d[:, None, 0]) / denom
        ok = (denom != 0) & (t > 0) & (s >= 0) & (s <= 1)
        t = np.where(ok, t, np.inf).min(axis=1)
        hit = t < best
        best[hit], kind[hit] = t[hit], "building"

    centers, radii, kinds = _circles(world)
    if len(centers):
        near = np.linalg.norm(centers - origin, axis=1) <= max_range + radii
        centers, radii = centers[near], radii[near]
        kinds = [k for k, keep in zip(kinds, near) if keep]
    if len(centers):
        f = origin - centers
        bq = d @ f.T  # (R, C), rays are unit length
        cq = (f * f).sum(axis=1) - radii ** 2
        disc = bq ** 2 - cq[None, :]
        root = np.sqrt(np.where(disc >= 0, disc, 0.0))
        t = np.where(cq[None, :] > 0, -bq - root, -bq + root)
        t = np.where((disc >= 0) & (t > 0), t, np.inf)
        j = t.argmin(axis=1)
        tc = t[np.arange(len(d)), j]
        hit = tc < best
        best[hit] = tc[hit]
        kind[hit] = np.array(kinds, dtype=object)[j[hit]]
    best[best > max_range] = np.inf
    kind[~np.isfinite(best)] = None
    return best, kind


def _on_road(world: SynthWorld, xy: np.ndarray) -> np.ndarray:
    on = np.zeros(len(xy), dtype=bool)
    for road in world.roads:
        for a, b in zip(road.points[:-1], road.points[1:]):
            e = b - a
            t = np.clip(((xy - a) @ e) / (e @ e), 0.0, 1.0)
            dist = np.linalg.norm(xy - (a + t[:, None] * e), axis=1)
            on |= dist <= road.width / 2
    return on


@dataclass
class SimulatedScan:
    scan: LabeledScan
    pose: tuple[float, float, float]


def simulate_scan(world: SynthWorld, pose, beams: int = 360 * 4, max_range: float = 50.0, noise: float = 0.0,
                  ground_step: float | None = 2.0, seed: int = 0) -> SimulatedScan:
    """Planar sweep from ``pose`` (east, north, yaw) returning points in the sensor frame."""
    east, north, yaw = map(float, pose)
    rng = np.random.default_rng([seed, beams])
    theta = 2 * np.pi * np.arange(beams) / beams
    world_dir = np.stack([np.cos(theta + yaw), np.sin(theta + yaw)], axis=1)
    rng_hit, kind = cast_rays(world, (east, north), world_dir, max_range)

    pts, labels = [], []
    hit = np.isfinite(rng_hit)
    if hit.any():
        r = rng_hit[hit] + (rng.normal(0.0, noise, hit.sum()) if noise > 0 else 0.0)
        keep = (r > 0) & (r < max_range)
        names = kind[hit][keep]
        lo = np.array([Z_RANGE[k][0] for k in names])
        hi = np.array([Z_RANGE[k][1] for k in names])
        z = lo + (hi - lo) * rng.uniform(size=len(names))
        th = theta[hit][keep]
        pts.append(np.stack([r[keep] * np.cos(th), r[keep] * np.sin(th), z], axis=1))
        labels.append(np.array([LABEL[k] for k in names], dtype=np.int64))

    if ground_step:
        stops = np.minimum(rng_hit, max_range)
        ranges = np.arange(ground_step, max_range, ground_step)
        bb, rr = np.nonzero(ranges[None, :] < stops[:, None])
        r = ranges[rr]
        th = theta[bb]
        world_xy = np.array([east, north]) + r[:, None] * world_dir[bb]
        road = _on_road(world, world_xy)
        pts.append(np.stack([r * np.cos(th), r * np.sin(th), np.zeros_like(r)], axis=1))
        labels.append(np.where(road, LABEL["road"], LABEL["terrain"]))

    if pts:
        scan = LabeledScan(np.concatenate(pts), np.concatenate(labels))
    else:
        scan = LabeledScan(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
    return SimulatedScan(scan, (east, north, yaw))


# -- OSM export ----------------------------------------------------------------------


def _latlon(xy, origin):
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    lat, lon = en_to_wgs84(xy[:, 0], xy[:, 1], origin)
    return np.stack([np.atleast_1d(lat), np.atleast_1d(lon)], axis=1)


def world_to_entities(world: SynthWorld, origin=SYNTH_ORIGIN) -> OsmEntitySet:
    out = OsmEntitySet()
    building, forest = class_id(AREAS, "building"), class_id(AREAS, "forest")
    for b in world.buildings:
        ring = b.corners()
        out.add(OsmEntity(building, _latlon(np.vstack([ring, ring[:1]]), origin), AREAS))
    road = class_id(WAYS, "road")
    for r in world.roads:
        out.add(OsmEntity(road, _latlon(r.points, origin), WAYS))
    tree, pole = class_id(NODES, "tree"), class_id(NODES, "pole")
    for center, radius in world.vegetation:
        if radius >= FOREST_RADIUS:
            ring = np.asarray(Point(center).buffer(radius, 8).exterior.coords)
            out.add(OsmEntity(forest, _latlon(ring, origin), AREAS))
        else:
            out.add(OsmEntity(tree, _latlon(center, origin), NODES))
    for xy in world.poles:
        out.add(OsmEntity(pole, _latlon(xy, origin), NODES))
    return out


def footprint_area(world: SynthWorld) -> float:
    return float(sum(b.extent[0] * b.extent[1] for b in world.buildings))


__all__ = [
    "Building", "FOREST_RADIUS", "Road", "SYNTH_ORIGIN", "SimulatedScan", "SynthWorld", "WorldConfigError",
    "WorldParams", "cast_rays", "footprint_area", "generate_world", "road_poses", "simulate_scan",
    "world_to_entities",
]
