"""OSM XML ingestion into classified areas / ways / nodes."""

from __future__ import annotations

import io
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import IO, Iterable
from xml.sax.saxutils import quoteattr

import numpy as np

from .classes import AREAS, CLASS_NAMES, NODES, WAYS, _RULES, classify

log = logging.getLogger(__name__)


class OsmParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


@dataclass
class OsmEntity:
    """A classified geometry; ``coords`` is an (n, 2) array of (lat, lon)."""

    class_id: int
    coords: np.ndarray
    channel: str

    @property
    def name(self) -> str:
        return CLASS_NAMES[self.channel][self.class_id - 1]


@dataclass
class OsmEntitySet:
    areas: list[OsmEntity] = field(default_factory=list)
    ways: list[OsmEntity] = field(default_factory=list)
    nodes: list[OsmEntity] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def channel(self, name: str) -> list[OsmEntity]:
        return {AREAS: self.areas, WAYS: self.ways, NODES: self.nodes}[name]

    def add(self, entity: OsmEntity) -> None:
        self.channel(entity.channel).append(entity)

    def __len__(self) -> int:
        return len(self.areas) + len(self.ways) + len(self.nodes)

    def warn(self, message: str) -> None:
        self.warnings.append(message)
        log.warning(message)


def _tags(elem) -> dict[str, str]:
    return {t.get("k"): t.get("v") for t in elem.findall("tag")}


def _join_rings(members: list[list[int]]) -> tuple[list[list[int]], int]:
    """Chain way node lists end-to-end into closed rings.

    Returns the closed rings and the number of members left dangling.
    """
    pending = [list(m) for m in members if len(m) >= 2]
    rings = []
    while pending:
        ring = pending.pop(0)
        progress = True
        while ring[0] != ring[-1] and progress:
            progress = False
            for i, seg in enumerate(pending):
                if seg[0] == ring[-1]:
                    ring.extend(seg[1:])
                elif seg[-1] == ring[-1]:
                    ring.extend(seg[-2::-1])
                elif seg[-1] == ring[0]:
                    ring[:0] = seg[:-1]
                elif seg[0] == ring[0]:
                    ring[:0] = seg[:0:-1]
                else:
                    continue
                pending.pop(i)
                progress = True
                break
        if ring[0] == ring[-1]:
            rings.append(ring)
        else:
            return rings, len(pending) + 1
    return rings, 0


def parse_osm(source: str | bytes | IO) -> OsmEntitySet:
    """Parse OSM XML from a path, raw bytes, or a binary/text stream."""
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    try:
        root = ET.parse(source).getroot()
    except ET.ParseError as exc:
        line, column = exc.position
        raise OsmParseError(f"malformed OSM XML: {exc}", line, column) from None

    result = OsmEntitySet()
    coords: dict[int, tuple[float, float]] = {}
    tagged_nodes = []
    for elem in root.iter("node"):
        try:
            nid = int(elem.get("id"))
            lat, lon = float(elem.get("lat")), float(elem.get("lon"))
        except (TypeError, ValueError):
            result.warn(f"node {elem.get('id')!r}: missing or non-numeric id/lat/lon, skipped")
            continue
        if abs(lat) > 90 or abs(lon) > 180:
            result.warn(f"node {nid}: coordinate ({lat}, {lon}) outside WGS-84 range, skipped")
            continue
        coords[nid] = (lat, lon)
        tags = _tags(elem)
        if tags:
            tagged_nodes.append((nid, tags))

    for nid, tags in tagged_nodes:
        cls = classify(tags, (NODES,))
        if cls is not None:
            result.add(OsmEntity(cls.class_id, np.array([coords[nid]]), NODES))

    way_refs: dict[int, list[int]] = {}
    for elem in root.iter("way"):
        wid = int(elem.get("id"))
        refs = [int(nd.get("ref")) for nd in elem.findall("nd")]
        way_refs[wid] = refs
        tags = _tags(elem)
        if not tags:
            continue
        closed = len(refs) >= 4 and refs[0] == refs[-1]
        cls = classify(tags, (AREAS, WAYS) if closed else (WAYS,))
        if cls is None:
            continue
        missing = [r for r in refs if r not in coords]
        if missing:
            result.warn(f"way {wid}: dangling node reference {missing[0]}, skipped")
            continue
        result.add(OsmEntity(cls.class_id, np.array([coords[r] for r in refs]), cls.channel))

    for elem in root.iter("relation"):
        tags = _tags(elem)
        if tags.get("type") != "multipolygon":
            continue
        cls = classify(tags, (AREAS,))
        if cls is None:
            continue
        rid = elem.get("id")
        outer = []
        for m in elem.findall("member"):
            if m.get("type") == "way" and m.get("role", "outer") in ("outer", ""):
                ref = int(m.get("ref"))
                if ref not in way_refs:
                    result.warn(f"relation {rid}: member way {ref} not in file, skipped")
                    continue
                outer.append(way_refs[ref])
        rings, dangling = _join_rings(outer)
        if dangling:
            result.warn(f"relation {rid}: {dangling} outer member(s) do not close a ring")
        for ring in rings:
            missing = [r for r in ring if r not in coords]
            if missing:
                result.warn(f"relation {rid}: dangling node reference {missing[0]}, ring skipped")
                continue
            result.add(OsmEntity(cls.class_id, np.array([coords[r] for r in ring]), AREAS))
    return result


def canonical_tags(channel: str, class_id: int) -> dict[str, str]:
    """A tag set that classifies back to (channel, class_id)."""
    name = CLASS_NAMES[channel][class_id - 1]
    rule = dict(_RULES[channel])[name]
    key, allowed = next(iter(rule.items()))
    return {key: "yes" if allowed == "*" else allowed[0]}


def write_osm(entities: OsmEntitySet | Iterable[OsmEntity], stream: IO[str]) -> None:
    """Serialize entities as OSM XML that :func:`parse_osm` reads back."""
    if isinstance(entities, OsmEntitySet):
        entities = [*entities.areas, *entities.ways, *entities.nodes]
    node_lines, way_lines = [], []
    next_id = 1

    def new_node(lat, lon, tags=None):
        nonlocal next_id
        nid = next_id
        next_id += 1
        body = "".join(f"<tag k={quoteattr(k)} v={quoteattr(v)}/>" for k, v in (tags or {}).items())
        node_lines.append(f'  <node id="{nid}" lat="{lat:.10f}" lon="{lon:.10f}">{body}</node>')
        return nid

    for ent in entities:
        tags = canonical_tags(ent.channel, ent.class_id)
        if ent.channel == NODES:
            new_node(*ent.coords[0], tags)
            continue
        pts = np.asarray(ent.coords)
        closed = ent.channel == AREAS
        if closed and np.array_equal(pts[0], pts[-1]):
            pts = pts[:-1]
        refs = [new_node(lat, lon) for lat, lon in pts]
        if closed:
            refs.append(refs[0])
        wid = next_id
        next_id += 1
        nds = "".join(f'<nd ref="{r}"/>' for r in refs)
        tag_xml = "".join(f"<tag k={quoteattr(k)} v={quoteattr(v)}/>" for k, v in tags.items())
        way_lines.append(f'  <way id="{wid}">{nds}{tag_xml}</way>')

    stream.write('<?xml version="1.0" encoding="UTF-8"?>\n<osm version="0.6" generator="polarosm">\n')
    stream.write("\n".join(node_lines + way_lines))
    stream.write("\n</osm>\n")
