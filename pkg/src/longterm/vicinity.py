# /src/longterm/vicinity.py
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DataError
from ..core.models import GeoEntity, LongEntity, StationIndex, TrafficLocation
from ..numerics.geo import (
    EARTH_RADIUS_M, build_ball_tree, cluster_radius_mean, dbscan, haversine_to,
    nearest_neighbor_distances, neighbor_counts, to_radians,
)
from ..numerics.stats import percentile

logger = logging.getLogger(__name__)

DAY = 86400


@dataclass(frozen=True)
class VicinityCounts:
    long_id: str
    s_r: int
    s_before: int
    s_after: int


@dataclass(frozen=True)
class RadiusEstimate:
    eps: float
    min_pts: int
    radius: float
    num_clusters: int


def sample_entities(entities: Sequence[GeoEntity], n: int, seed: int) -> List[GeoEntity]:
    """Seeded sample without replacement, input order preserved; everything when n >= len."""
    if n >= len(entities):
        return list(entities)
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(len(entities), size=n, replace=False))
    return [entities[i] for i in picks]


def _points(entities: Sequence[GeoEntity]) -> List[Tuple[float, float]]:
    return [(e.loc.lat, e.loc.lon) for e in entities if isinstance(e.loc, TrafficLocation)]


def estimate_vicinity_radius(s1: Sequence[GeoEntity], s2: Sequence[GeoEntity], q: float = 0.99) -> RadiusEstimate:
    """
    eps = q-th percentile of nearest-neighbor distances in S2; min_pts = ceil of the q-th
    percentile of S2 neighbor counts within eps; R = mean DBSCAN cluster radius over S1.
    """
    p1, p2 = _points(s1), _points(s2)
    if len(p2) < 100:
        raise DataError(f"Parameter sample needs at least 100 traffic entities (got {len(p2)})")
    if len(p1) < len(p2):
        raise DataError(f"Clustering sample ({len(p1)}) must be at least as large as the parameter sample ({len(p2)})")
    eps = percentile(nearest_neighbor_distances(p2), q)
    if eps <= 0:
        raise DataError(f"Nearest-neighbor distance percentile q={q} is zero; sample has too many coincident points")
    min_pts = max(1, int(math.ceil(percentile(neighbor_counts(p2, eps), q))))
    result = dbscan(p1, eps, min_pts)
    if result.num_clusters == 0:
        raise DataError(f"DBSCAN found no clusters (eps={eps:.1f} m, min_pts={min_pts}); use a larger sample")
    radius = cluster_radius_mean(p1, result)
    logger.info(f"Vicinity radius: eps={eps:.1f} m, min_pts={min_pts}, {result.num_clusters} clusters, R={radius:.1f} m")
    return RadiusEstimate(eps, min_pts, radius, result.num_clusters)


def window_shift(l: LongEntity, gap_days: int) -> int:
    """(W + D) days in seconds, D = duration rounded up to whole days."""
    return (gap_days + math.ceil(l.duration / DAY)) * DAY


def _count_windows(l: LongEntity, starts: np.ndarray, ends: np.ndarray, gap_days: int) -> Tuple[int, int, int]:
    shift = window_shift(l, gap_days)

    def inside(lo: int, hi: int) -> int:
        return int(np.count_nonzero((starts > lo) & (ends < hi)))

    return (inside(l.start, l.end),
            inside(l.start - shift, l.end - shift),
            inside(l.start + shift, l.end + shift))


def _traffic(entities: Sequence[GeoEntity]) -> List[GeoEntity]:
    return [e for e in entities if isinstance(e.loc, TrafficLocation)]


def vicinity_counts(l: LongEntity, entities: Sequence[GeoEntity], R: float, W: int,
                    idx: StationIndex) -> VicinityCounts:
    """
    Traffic entities in the vicinity of l strictly inside its span and inside the windows shifted
    W + D days before and after. Vicinity: within R meters of the center, or (weather only) a
    zipcode served by l's station. l's own members are never counted.
    """
    if R <= 0:
        raise DataError(f"R must be > 0 (got {R})")
    traffic = [e for e in _traffic(entities) if e.id not in l.member_ids]
    if l.center is not None:
        dist = haversine_to([(e.loc.lat, e.loc.lon) for e in traffic], l.center)
        near = [e for e, d in zip(traffic, dist) if d <= R]
    else:
        near = [e for e in traffic if idx.station_for_zip(e.loc.zipcode) == l.airport_code]
    starts = np.array([e.start for e in near], dtype=np.int64)
    ends = np.array([e.end for e in near], dtype=np.int64)
    return VicinityCounts(l.id, *_count_windows(l, starts, ends, W))


class _VicinityIndex:
    """Read-only spatial index over traffic entities for batched counting."""

    def __init__(self, entities: Sequence[GeoEntity], idx: StationIndex):
        self.traffic = _traffic(entities)
        self.ids = np.array([e.id for e in self.traffic], dtype=object)
        self.coords = np.array([(e.loc.lat, e.loc.lon) for e in self.traffic], dtype=float).reshape(-1, 2)
        self.starts = np.array([e.start for e in self.traffic], dtype=np.int64)
        self.ends = np.array([e.end for e in self.traffic], dtype=np.int64)
        self.tree = build_ball_tree(self.coords) if len(self.traffic) else None
        self.by_station: Dict[str, List[int]] = defaultdict(list)
        for i, e in enumerate(self.traffic):
            station = idx.station_for_zip(e.loc.zipcode)
            if station is not None:
                self.by_station[station].append(i)

    def candidates(self, l: LongEntity, R: float) -> np.ndarray:
        if l.center is None:
            return np.asarray(self.by_station.get(l.airport_code, []), dtype=int)
        if self.tree is None:
            return np.zeros(0, dtype=int)
        # slightly widened query, then the exact distance test used by vicinity_counts
        rough = self.tree.query_radius(to_radians([l.center]), r=R * (1 + 1e-6) / EARTH_RADIUS_M)[0]
        rough = np.sort(rough)
        if rough.size == 0:
            return rough
        exact = haversine_to(self.coords[rough], l.center)
        return rough[exact <= R]

    def count(self, l: LongEntity, R: float, W: int) -> VicinityCounts:
        cand = self.candidates(l, R)
        if cand.size and l.member_ids:
            own = np.array([i in l.member_ids for i in self.ids[cand]], dtype=bool)
            cand = cand[~own]
        return VicinityCounts(l.id, *_count_windows(l, self.starts[cand], self.ends[cand], W))


def compute_all_vicinity_counts(longs: Sequence[LongEntity], entities: Sequence[GeoEntity], R: float, W: int,
                                idx: StationIndex, jobs: int = 1) -> Dict[str, VicinityCounts]:
    """Batched vicinity_counts over a shared spatial index; one worker thread per job."""
    if R <= 0:
        raise DataError(f"R must be > 0 (got {R})")
    index = _VicinityIndex(entities, idx)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda l: index.count(l, R, W), longs))
    else:
        results = [index.count(l, R, W) for l in longs]
    logger.info(f"Computed vicinity counts for {len(results)} long entities (R={R:.1f} m, W={W} days)")
    return {c.long_id: c for c in results}
