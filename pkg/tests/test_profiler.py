# tests/test_profiler.py
import math

import numpy as np
import pytest

from src.core.errors import DataError
from src.core.models import TRAFFIC_TYPES, WEATHER_TYPES
from src.mining.patterns import TreePattern
from src.numerics.kmeans import kmeans
from src.regions.profiler import (
    StateVector, build_state_vectors, cluster_states, description_length, dl_penalty,
)

P1 = TreePattern.from_encoding("Rain Accident ^")
P2 = TreePattern.from_encoding("Snow Accident ^")
P3 = TreePattern.from_encoding("Accident Congestion ^")


def test_state_vectors_share_one_sorted_universe():
    vectors = build_state_vectors({"OH": [P2, P1], "CA": [P3], "TX": []})
    assert [v.state for v in vectors] == ["CA", "OH", "TX"]
    universe = vectors[0].patterns
    assert list(universe) == sorted([P1, P2, P3])
    by_state = {v.state: v for v in vectors}
    assert by_state["TX"].vector.sum() == 0
    assert by_state["OH"].vector[universe.index(P1)] == 1.0
    assert by_state["OH"].vector.sum() == 2


def test_dl_penalty():
    assert dl_penalty(24, 4) == pytest.approx(5 * math.log(24))


def test_description_length_prefers_tight_clusters():
    x = np.array([[0.0], [0.1], [5.0], [5.1], [10.0], [10.1]])
    good = kmeans(x, 3, seed=0)
    bad = kmeans(x, 2, seed=0)
    assert description_length(x, good) < description_length(x, bad)
    with pytest.raises(DataError):
        description_length(x[:1], kmeans(x[:1], 1, seed=0))


def _blob_vectors(per_blob=6, blobs=4, dims=5, jitter=1e-9, seed=0):
    rng = np.random.default_rng(seed)
    patterns = tuple(TreePattern.from_encoding(f"Rain {label} ^") for label in
                     ("Accident", "Congestion", "Construction", "Event", "Lane-Blocked")[:dims])
    vectors = []
    for i in range(per_blob * blobs):
        center = np.zeros(dims)
        center[i % blobs] = 1.0
        vectors.append(StateVector(f"S{i:02d}", center + rng.normal(0, jitter, size=dims), patterns))
    return vectors


def test_minimum_description_length_finds_four_blobs():
    report = cluster_states(_blob_vectors(), k_range=(2, 6), seed=0, restarts=4)
    assert report.k == 4
    assert set(report.dl_by_k) == {2, 3, 4, 5, 6}
    assert report.dl == min(report.dl_by_k.values())
    assert not report.degenerate
    for i in range(24):
        assert report.assignment[f"S{i:02d}"] == i % 4
    assert all(len(states) == 6 for states in report.clusters.values())


def test_distinguishing_patterns():
    vectors = build_state_vectors({"AZ": [P1], "CA": [P1, P3], "NY": [P2, P3], "OH": [P2]})
    report = cluster_states(vectors, k_range=(2, 2), seed=1)
    assert report.clusters == {0: ["AZ", "CA"], 1: ["NY", "OH"]}
    assert report.distinguishing[0] == [P1]
    assert report.distinguishing[1] == [P2]
    payload = report.to_dict()
    assert payload["k"] == 2
    assert payload["log_base"] == "e"
    assert payload["clusters"][0] == {"id": 0, "states": ["AZ", "CA"], "distinguishing": [P1.encoding]}


def test_k_above_state_count_is_skipped():
    vectors = build_state_vectors({"AZ": [P1], "CA": [P2], "OH": [P3]})
    report = cluster_states(vectors, k_range=(2, 10), seed=0)
    assert set(report.dl_by_k) == {2, 3}
    with pytest.raises(DataError):
        cluster_states(vectors, k_range=(4, 5), seed=0)
    with pytest.raises(DataError):
        cluster_states([], k_range=(2, 3))


def test_identical_states_are_flagged_degenerate():
    vectors = build_state_vectors({"AZ": [P1], "CA": [P1], "OH": [P1]})
    report = cluster_states(vectors, k_range=(2, 2), seed=0)
    assert report.degenerate


def test_planted_block_matrix_over_48_states():
    labels = TRAFFIC_TYPES + WEATHER_TYPES
    universe = sorted(TreePattern.from_encoding(f"{a} {b} ^") for a in labels for b in labels if a != b)[:90]
    blocks = {b: [p for j, p in enumerate(universe) if j % 4 == b] for b in range(4)}
    per_state = {f"S{i:02d}": blocks[i % 4] for i in range(48)}

    report = cluster_states(build_state_vectors(per_state), k_range=(2, 10), seed=0)

    assert report.k == 4
    assert set(report.dl_by_k) == set(range(2, 11))
    assert not report.degenerate
    assert report.assignment == {f"S{i:02d}": i % 4 for i in range(48)}
    assert report.distinguishing == blocks
