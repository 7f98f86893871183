# /src/mining/metadata.py
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..core.errors import DataError
from ..relations.forest import Forest
from .miner import FrequentPattern, HostTree, contains_embedded
from .patterns import TreePattern

logger = logging.getLogger(__name__)

HIGHWAY_PREFIXES = ("I-", "US-", "SR-")
ROAD_HIGHWAY = "Interstates and Freeways"
ROAD_CITY = "Cities"
ROAD_MIXED = "Mixture"


@dataclass(frozen=True)
class StatePatternInfo:
    cities: int
    mean_support: float


@dataclass(frozen=True)
class PeakHours:
    start: Optional[int]  # local hour, inclusive
    end: Optional[int]  # local hour, exclusive (may wrap past midnight)
    instance_count: int
    flat: bool = False

    def label(self) -> str:
        if self.start is None:
            return ""
        return f"{self.start}-{self.end}"


def core_state_patterns(city_results: Sequence[Tuple[Tuple[str, str], List[FrequentPattern]]]
                        ) -> Dict[str, Dict[TreePattern, StatePatternInfo]]:
    """
    Union of the city-level propagation patterns (singletons excluded) per state, with the number
    of contributing cities and their mean support.
    """
    supports: Dict[str, Dict[TreePattern, List[float]]] = defaultdict(lambda: defaultdict(list))
    for (state, _city), patterns in city_results:
        per_state = supports[state]  # states without patterns still get an entry
        for fp in patterns:
            if not fp.singleton:
                per_state[fp.pattern].append(fp.support)
    return {
        state: {p: StatePatternInfo(len(s), float(np.mean(s))) for p, s in sorted(per.items())}
        for state, per in sorted(supports.items())
    }


def peak_hours(hours: Sequence[int], mass_fraction: float = 0.25) -> PeakHours:
    """
    Hours whose count is at least `mass_fraction` of the busiest hour form circular runs; the run
    with the largest mass wins when it holds at least `mass_fraction` of all instances.
    """
    n = len(hours)
    if n == 0:
        return PeakHours(None, None, 0)
    hist = np.bincount(np.asarray(hours, dtype=int) % 24, minlength=24)
    hot = hist >= mass_fraction * hist.max()
    if hot.all():
        return PeakHours(0, 24, n, flat=True)
    runs: List[Tuple[int, int, int]] = []  # (start, length, mass)
    first_cold = int(np.flatnonzero(~hot)[0])
    start, length = None, 0
    for step in range(1, 25):
        h = (first_cold + step) % 24
        if hot[h]:
            if start is None:
                start, length = h, 0
            length += 1
        elif start is not None:
            runs.append((start, length, int(sum(hist[(start + i) % 24] for i in range(length)))))
            start = None
    best = min(runs, key=lambda r: (-r[2], -r[1], r[0]))
    if best[2] < mass_fraction * n:
        return PeakHours(None, None, n)
    end = best[0] + best[1]
    return PeakHours(best[0], end if end <= 24 else end - 24, n)


def local_hour(epoch: int, tz_offset_hours: float) -> int:
    return int(((epoch + tz_offset_hours * 3600) // 3600) % 24)


def pattern_occurrence_metadata(forest: Forest, p: TreePattern, tz_offset: float,
                                mass_fraction: float = 0.25,
                                tree_indices: Optional[Iterable[int]] = None) -> PeakHours:
    """Peak local start hours of the roots of all trees containing p."""
    indices = list(tree_indices) if tree_indices is not None else [
        i for i, t in enumerate(forest.trees) if contains_embedded(HostTree(t), p)
    ]
    if not indices:
        raise DataError(f"Pattern '{p.encoding}' is not contained in any tree of {forest.partition_key}")
    hours = [local_hour(forest.trees[i].starts[forest.trees[i].root], tz_offset) for i in indices]
    return peak_hours(hours, mass_fraction)


def road_type(streets: Iterable[str]) -> str:
    """Heuristic road class from street names: highway prefixes, none, or a mixture."""
    names = [s for s in streets if s]
    if not names:
        return ROAD_CITY
    highway = [s.upper().startswith(HIGHWAY_PREFIXES) for s in names]
    if all(highway):
        return ROAD_HIGHWAY
    if not any(highway):
        return ROAD_CITY
    return ROAD_MIXED


def pattern_streets(forest: Forest, tree_indices: Iterable[int]) -> List[str]:
    return [s for i in tree_indices for s in forest.trees[i].streets.values()]


def pattern_root_summary(patterns: Iterable[TreePattern]) -> Dict[str, object]:
    """How many unique propagation patterns start with a weather entity, broken down by root label."""
    unique: Set[TreePattern] = {p for p in patterns if p.node_count >= 2}
    by_root = Counter(p.root_label for p in unique)
    return {
        "patterns": len(unique),
        "weather_initiated": sum(1 for p in unique if p.weather_initiated),
        "by_root_label": dict(sorted(by_root.items())),
    }
