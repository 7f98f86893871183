# /src/relations/extraction.py
import bisect
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from ..core.config import PipelineConfig
from ..core.models import GeoEntity, StationIndex, TrafficLocation
from ..numerics.geo import haversine

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChildParentRelation:
    parent_id: str
    child_id: str
    lag: int  # child.start - parent.start, seconds
    distance: Optional[float] = None  # meters; None for weather parents

    def sort_key(self) -> Tuple[str, int, str]:
        return (self.child_id, self.lag, self.parent_id)


def co_occurs(e1: GeoEntity, e2: GeoEntity, cfg: PipelineConfig) -> bool:
    return abs(e1.start - e2.start) <= cfg.effective_t_thresh(e1.label, e2.label)


def collocated(e1: GeoEntity, e2: GeoEntity, cfg: PipelineConfig, idx: StationIndex) -> bool:
    """
    Traffic-traffic: identical address fields and within d_thresh meters.
    Weather-traffic: the weather station serves the traffic entity's zipcode.
    Weather-weather: never.
    """
    if e1.is_weather and e2.is_weather:
        return False
    if not e1.is_weather and not e2.is_weather:
        return (e1.loc.address_key() == e2.loc.address_key()
                and haversine((e1.loc.lat, e1.loc.lon), (e2.loc.lat, e2.loc.lon)) <= cfg.d_thresh)
    weather, traffic = (e1, e2) if e1.is_weather else (e2, e1)
    station = idx.station_for_zip(traffic.loc.zipcode)
    if station is None:
        logger.warning(f"Zipcode '{traffic.loc.zipcode}' of entity {traffic.id} is not in the station index")
        return False
    return station == weather.loc.airport_code


def _traffic_pairs(traffic: Sequence[GeoEntity], cfg: PipelineConfig) -> Iterator[Tuple[GeoEntity, GeoEntity, float]]:
    groups: Dict[tuple, List[GeoEntity]] = defaultdict(list)
    for e in traffic:
        groups[e.loc.address_key()].append(e)
    window = cfg.max_t_thresh
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda e: (e.start, e.id))
        starts = [e.start for e in members]
        for i, a in enumerate(members):
            stop = bisect.bisect_right(starts, a.start + window, lo=i + 1)
            for b in members[i + 1:stop]:
                if not co_occurs(a, b, cfg):
                    continue
                distance = haversine((a.loc.lat, a.loc.lon), (b.loc.lat, b.loc.lon))
                if distance <= cfg.d_thresh:
                    yield a, b, distance


def _weather_pairs(weather: Sequence[GeoEntity], traffic: Sequence[GeoEntity], cfg: PipelineConfig,
                   idx: StationIndex) -> Iterator[Tuple[GeoEntity, GeoEntity]]:
    by_station: Dict[str, List[GeoEntity]] = defaultdict(list)
    unmapped = set()
    for t in traffic:
        station = idx.station_for_zip(t.loc.zipcode)
        if station is None:
            unmapped.add(t.loc.zipcode)
        else:
            by_station[station].append(t)
    if unmapped:
        logger.warning(f"{len(unmapped)} zipcodes are not in the station index; their entities get no weather partner")
    for bucket in by_station.values():
        bucket.sort(key=lambda e: (e.start, e.id))
    starts = {s: [e.start for e in b] for s, b in by_station.items()}
    window = cfg.max_t_thresh
    for w in sorted(weather, key=lambda e: (e.start, e.id)):
        bucket = by_station.get(w.loc.airport_code)
        if not bucket:
            continue
        lo = bisect.bisect_left(starts[w.loc.airport_code], w.start - window)
        hi = bisect.bisect_right(starts[w.loc.airport_code], w.start + window)
        for t in bucket[lo:hi]:
            if co_occurs(w, t, cfg):
                yield w, t


def _split(entities: Sequence[GeoEntity]) -> Tuple[List[GeoEntity], List[GeoEntity]]:
    traffic = [e for e in entities if not e.is_weather and isinstance(e.loc, TrafficLocation)]
    weather = [e for e in entities if e.is_weather]
    return traffic, weather


def extract_relations(entities: Sequence[GeoEntity], cfg: PipelineConfig,
                      idx: StationIndex) -> List[ChildParentRelation]:
    """
    All child-parent relations: weakly dependent pairs where the parent starts strictly
    before the child. Weather entities are never children. Sorted by (child_id, lag, parent_id).
    """
    traffic, weather = _split(entities)
    relations: List[ChildParentRelation] = []
    for a, b, distance in _traffic_pairs(traffic, cfg):
        if a.start < b.start:
            relations.append(ChildParentRelation(a.id, b.id, b.start - a.start, distance))
    for w, t in _weather_pairs(weather, traffic, cfg, idx):
        if w.start < t.start:
            relations.append(ChildParentRelation(w.id, t.id, t.start - w.start, None))
    relations.sort(key=ChildParentRelation.sort_key)
    logger.info(f"Extracted {len(relations)} child-parent relations from {len(entities)} entities")
    return relations


def dependency_summary(entities: Sequence[GeoEntity], cfg: PipelineConfig, idx: StationIndex) -> Dict[str, float]:
    """Share of traffic / weather entities with at least one weakly dependent partner, plus relation count."""
    traffic, weather = _split(entities)
    linked = set()
    relation_count = 0
    for a, b, _ in _traffic_pairs(traffic, cfg):
        linked.update((a.id, b.id))
        relation_count += a.start != b.start
    weather_linked = set()
    for w, t in _weather_pairs(weather, traffic, cfg, idx):
        linked.add(t.id)
        weather_linked.add(w.id)
        relation_count += w.start < t.start
    return {
        "traffic_with_partner": len(linked) / len(traffic) if traffic else 0.0,
        "weather_with_traffic_partner": len(weather_linked) / len(weather) if weather else 0.0,
        "relations": relation_count,
    }
