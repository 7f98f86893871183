# /src/longterm/entities.py
import logging
from collections import Counter
from typing import Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..core.errors import DataError, InvariantError
from ..core.models import (
    GeoEntity, LongEntity, StationIndex, TrafficLocation, composite_label, is_canonical_composite, is_composite,
)
from ..numerics.geo import haversine
from ..numerics.stats import percentile

logger = logging.getLogger(__name__)


def long_duration_threshold(entities: Sequence[GeoEntity], q: float = 0.99) -> float:
    """The q-th percentile (linear interpolation) of entity durations, in seconds."""
    if not entities:
        raise DataError("Cannot derive a long-duration threshold from no entities")
    return percentile([e.duration for e in entities], q)


def extract_long_entities(entities: Sequence[GeoEntity], threshold: float, idx: StationIndex) -> List[LongEntity]:
    """Entities lasting at least `threshold` seconds, as single-member LongEntity records."""
    longs: List[LongEntity] = []
    for e in entities:
        if e.duration < threshold:
            continue
        if isinstance(e.loc, TrafficLocation):
            longs.append(LongEntity(
                id=e.id, label=e.label, start=e.start, end=e.end, member_ids=frozenset((e.id,)),
                center=(e.loc.lat, e.loc.lon), zipcodes=frozenset((e.loc.zipcode,)) if e.loc.zipcode else frozenset(),
                state=e.loc.state or None, traffic_members=1,
            ))
        else:
            longs.append(LongEntity(
                id=e.id, label=e.label, start=e.start, end=e.end, member_ids=frozenset((e.id,)),
                airport_code=e.loc.airport_code, state=idx.station_state.get(e.loc.airport_code),
            ))
    longs.sort(key=lambda l: (l.start, l.id))
    logger.info(f"Extracted {len(longs)} long entities (threshold {threshold / 60:.1f} min)")
    return longs


def intervals_overlap(a: LongEntity, b: LongEntity) -> bool:
    return a.start <= b.end and b.start <= a.end


def _served_stations(l: LongEntity, idx: StationIndex) -> Set[str]:
    stations = {idx.station_for_zip(z) for z in l.zipcodes} - {None}
    if l.airport_code:
        stations.add(l.airport_code)
    return stations


def longs_collocated(a: LongEntity, b: LongEntity, rho: float, idx: StationIndex) -> bool:
    """
    Two entities with centers collocate when the centers lie within rho meters. An entity
    without a center (weather only) collocates when its station serves the other entity:
    same station, or a station mapped from the other's zipcodes.
    """
    if a.center is not None and b.center is not None:
        if haversine(a.center, b.center) <= rho:
            return True
    if a.is_weather_only and a.airport_code in _served_stations(b, idx):
        return True
    if b.is_weather_only and b.airport_code in _served_stations(a, idx):
        return True
    return False


def merge_group(group: Sequence[LongEntity]) -> LongEntity:
    """Merges overlapping entities into one; the first entity's id is kept."""
    first = group[0]
    if len(group) == 1:
        return first
    weighted = [(l.center, max(l.traffic_members, 1)) for l in group if l.center is not None]
    center: Optional[Tuple[float, float]] = None
    if weighted:
        coords = np.array([c for c, _ in weighted])
        weights = np.array([w for _, w in weighted], dtype=float)
        mean = np.average(coords, axis=0, weights=weights)
        center = (float(mean[0]), float(mean[1]))
    airports = sorted({l.airport_code for l in group if l.airport_code})
    has_weather = any(l.is_weather_only or l.mixed for l in group)
    state = next((l.state for l in group if l.state), None)
    label = composite_label(l.label for l in group)
    if is_composite(label) and not is_canonical_composite(label):
        raise InvariantError(f"Merged label '{label}' is not a sorted composite of known labels")
    return LongEntity(
        id=first.id,
        label=label,
        start=min(l.start for l in group),
        end=max(l.end for l in group),
        member_ids=frozenset().union(*(l.member_ids for l in group)),
        center=center,
        airport_code=airports[0] if airports else None,
        zipcodes=frozenset().union(*(l.zipcodes for l in group)),
        state=state,
        traffic_members=sum(l.traffic_members for l in group),
        mixed=center is not None and has_weather,
    )


def _merge_pass(longs: List[LongEntity], rho: float, idx: StationIndex) -> Tuple[List[LongEntity], int]:
    pending = sorted(longs, key=lambda l: (l.start, l.id))
    out: List[LongEntity] = []
    merges = 0
    while pending:
        l = pending.pop(0)
        group, rest = [l], []
        for i, other in enumerate(pending):
            if other.start > l.end:
                rest.extend(pending[i:])
                break
            if intervals_overlap(l, other) and longs_collocated(l, other, rho, idx):
                group.append(other)
            else:
                rest.append(other)
        merges += len(group) - 1
        out.append(merge_group(group))
        pending = rest
    return out, merges


def merge_overlaps(longs: Sequence[LongEntity], rho: float, idx: StationIndex) -> List[LongEntity]:
    """
    Merges interval-overlapping, collocated long entities. Each pass walks the entities in
    (start, id) order and folds every overlapping, collocated partner of the current entity
    into it; passes repeat until nothing merges.
    """
    if rho <= 0:
        raise DataError(f"rho must be > 0 (got {rho})")
    current = list(longs)
    passes = 0
    while True:
        current, merges = _merge_pass(current, rho, idx)
        passes += 1
        if merges == 0:
            break
    logger.info(f"Merged {len(longs)} long entities into {len(current)} in {passes} passes")
    return sorted(current, key=lambda l: (l.start, l.id))


def type_frequency(longs: Iterable[LongEntity], top: Optional[int] = None) -> List[Tuple[str, int]]:
    counts = Counter(l.label for l in longs)
    rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return rows[:top] if top else rows
