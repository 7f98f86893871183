# tests/conftest.py
import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import pytest

from src.core.config import PipelineConfig
from src.core.models import (
    EntityKind, EntityType, GeoEntity, StationIndex, StreetSide, TrafficLocation, WeatherLocation,
)
from src.relations.forest import Forest, RelationTree

COLUMBUS = (39.9612, -82.9988)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: larger property checks and full pipeline reruns")


def make_traffic(id, label="Accident", start=0, duration=1800, lat=COLUMBUS[0], lon=COLUMBUS[1],
                 street="High St", zipcode="43210", city="Columbus", state="OH",
                 side=StreetSide.RIGHT) -> GeoEntity:
    return GeoEntity(
        id=id, etype=EntityType(EntityKind.TRAFFIC, label), start=start, end=start + duration,
        loc=TrafficLocation(lat, lon, street, side, zipcode, city, state),
    )


def make_weather(id, label="Rain", start=0, duration=3600, airport="KCMH", severity=None) -> GeoEntity:
    return GeoEntity(
        id=id, etype=EntityType(EntityKind.WEATHER, label), start=start, end=start + duration,
        loc=WeatherLocation(airport), severity=severity,
    )


def make_tree(node, prefix="n", start=0) -> RelationTree:
    """RelationTree from a nested (label, children) tuple; ids follow preorder, starts increase by a minute."""
    nodes, children, starts = {}, {}, {}

    def walk(n):
        node_id = f"{prefix}{len(nodes)}"
        nodes[node_id] = n[0]
        starts[node_id] = start + 60 * len(starts)
        kids = [walk(c) for c in n[1]]
        if kids:
            children[node_id] = kids
        return node_id

    root = walk(node)
    return RelationTree(root=root, nodes=nodes, children=children, starts=starts)


def leaf(label):
    return (label, ())


@pytest.fixture
def cfg() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture
def station_index() -> StationIndex:
    return StationIndex(
        stations={"KCMH": (39.998, -82.892), "KLCK": (39.813, -82.928)},
        zip_to_station={"43210": "KCMH", "43211": "KCMH", "43207": "KLCK"},
        station_state={"KCMH": "OH", "KLCK": "OH"},
    )


@pytest.fixture
def forest_of():
    def build(*nodes, key=("OH", "Columbus")) -> Forest:
        return Forest(key, [make_tree(n, prefix=f"t{i}_") for i, n in enumerate(nodes)])
    return build
