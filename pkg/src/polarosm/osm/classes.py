"""Fixed OSM semantic class table for the three raster channels.

Class ids are 1-based within each channel; 0 means empty.
"""

from __future__ import annotations

from typing import Mapping, NamedTuple

AREAS = "areas"
WAYS = "ways"
NODES = "nodes"
CHANNELS = (AREAS, WAYS, NODES)

AREA_CLASSES = ("building", "parking", "playground", "grass", "park", "forest", "water")

WAY_CLASSES = (
    "fence", "wall", "hedge", "kerb", "building outline",
    "cycleway", "path", "road", "busway", "tree row",
)

NODE_CLASSES = (
    "parking entrance", "street lamp", "junction", "traffic signal", "stop sign",
    "give way sign", "bus stop", "stop area", "crossing", "gate",
    "bollard", "gas station", "bicycle parking", "charging station", "shop",
    "restaurant", "bar", "vending machine", "pharmacy", "tree",
    "stone", "ATM", "toilets", "water fountain", "bench",
    "waste basket", "post box", "artwork", "recycling station", "clock",
    "fire hydrant", "pole", "street cabinet",
)

CLASS_NAMES = {AREAS: AREA_CLASSES, WAYS: WAY_CLASSES, NODES: NODE_CLASSES}
NUM_CLASSES = {ch: len(names) for ch, names in CLASS_NAMES.items()}

# values "*" match any value except "no"
_ROAD_HIGHWAYS = (
    "motorway", "trunk", "primary", "secondary", "tertiary", "unclassified",
    "residential", "service", "living_street", "road", "motorway_link",
    "trunk_link", "primary_link", "secondary_link", "tertiary_link",
)

_AREA_RULES = (
    ("building", {"building": "*"}),
    ("parking", {"amenity": ("parking",)}),
    ("playground", {"leisure": ("playground",)}),
    ("grass", {"landuse": ("grass", "meadow"), "natural": ("grassland",)}),
    ("park", {"leisure": ("park", "garden")}),
    ("forest", {"landuse": ("forest",), "natural": ("wood",)}),
    ("water", {"natural": ("water",), "landuse": ("reservoir", "basin"), "waterway": ("riverbank",)}),
)

_WAY_RULES = (
    ("fence", {"barrier": ("fence",)}),
    ("wall", {"barrier": ("wall", "retaining_wall")}),
    ("hedge", {"barrier": ("hedge",)}),
    ("kerb", {"barrier": ("kerb",)}),
    ("building outline", {"building": "*"}),
    ("cycleway", {"highway": ("cycleway",)}),
    ("path", {"highway": ("path", "footway", "pedestrian", "steps", "track", "bridleway")}),
    ("road", {"highway": _ROAD_HIGHWAYS}),
    ("busway", {"highway": ("busway",)}),
    ("tree row", {"natural": ("tree_row",)}),
)

_NODE_RULES = (
    ("parking entrance", {"amenity": ("parking_entrance",)}),
    ("street lamp", {"highway": ("street_lamp",)}),
    ("junction", {"highway": ("motorway_junction",), "junction": "*"}),
    ("traffic signal", {"highway": ("traffic_signals",)}),
    ("stop sign", {"highway": ("stop",)}),
    ("give way sign", {"highway": ("give_way",)}),
    ("bus stop", {"highway": ("bus_stop",)}),
    ("stop area", {"public_transport": ("stop_position", "platform", "stop_area")}),
    ("crossing", {"highway": ("crossing",)}),
    ("gate", {"barrier": ("gate", "lift_gate")}),
    ("bollard", {"barrier": ("bollard",)}),
    ("gas station", {"amenity": ("fuel",)}),
    ("bicycle parking", {"amenity": ("bicycle_parking",)}),
    ("charging station", {"amenity": ("charging_station",)}),
    ("shop", {"shop": "*"}),
    ("restaurant", {"amenity": ("restaurant", "fast_food", "cafe")}),
    ("bar", {"amenity": ("bar", "pub", "biergarten")}),
    ("vending machine", {"amenity": ("vending_machine",)}),
    ("pharmacy", {"amenity": ("pharmacy",)}),
    ("tree", {"natural": ("tree",)}),
    ("stone", {"natural": ("stone",)}),
    ("ATM", {"amenity": ("atm",)}),
    ("toilets", {"amenity": ("toilets",)}),
    ("water fountain", {"amenity": ("drinking_water", "fountain")}),
    ("bench", {"amenity": ("bench",)}),
    ("waste basket", {"amenity": ("waste_basket",)}),
    ("post box", {"amenity": ("post_box",)}),
    ("artwork", {"tourism": ("artwork",)}),
    ("recycling station", {"amenity": ("recycling",)}),
    ("clock", {"amenity": ("clock",)}),
    ("fire hydrant", {"emergency": ("fire_hydrant",)}),
    ("pole", {"power": ("pole",), "man_made": ("utility_pole", "pole")}),
    ("street cabinet", {"man_made": ("street_cabinet",)}),
)

_RULES = {AREAS: _AREA_RULES, WAYS: _WAY_RULES, NODES: _NODE_RULES}


class OsmClass(NamedTuple):
    channel: str
    class_id: int

    @property
    def name(self) -> str:
        return CLASS_NAMES[self.channel][self.class_id - 1]


def class_id(channel: str, name: str) -> int:
    """1-based id of a class name within its channel."""
    try:
        return CLASS_NAMES[channel].index(name) + 1
    except (KeyError, ValueError):
        raise KeyError(f"no class {name!r} in channel {channel!r}") from None


def _matches(tags: Mapping[str, str], rule: Mapping) -> bool:
    for key, allowed in rule.items():
        value = tags.get(key)
        if value is None:
            continue
        if allowed == "*":
            if value != "no":
                return True
        elif value in allowed:
            return True
    return False


def classify(tags: Mapping[str, str], channels=CHANNELS) -> OsmClass | None:
    """Look a tag set up in the class table.

    ``channels`` restricts and orders the channels searched; the first
    matching rule wins. Returns None for tag sets that match nothing.
    """
    for channel in channels:
        for name, rule in _RULES[channel]:
            if _matches(tags, rule):
                return OsmClass(channel, class_id(channel, name))
    return None
