# /src/ingestion/stations.py
import logging
from collections import Counter, defaultdict
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics.pairwise import haversine_distances

from ..core.errors import DataError
from ..core.models import GeoEntity, StationIndex, TrafficLocation, WeatherLocation

logger = logging.getLogger(__name__)


def build_station_index(stations: Sequence[Tuple], traffic: Sequence[GeoEntity]) -> StationIndex:
    """
    Maps every zipcode seen in `traffic` to the station nearest the zipcode's coordinate centroid.

    `stations` holds (airport_code, lat, lon) or (airport_code, lat, lon, state) tuples.
    Equidistant stations resolve to the lexicographically smallest code. Stations without a
    state take the most common state of the zipcodes they serve.
    """
    if not stations:
        raise DataError("Cannot build a station index from an empty station list")
    ordered = sorted(stations, key=lambda s: s[0])
    codes = [s[0] for s in ordered]
    coords = {s[0]: (float(s[1]), float(s[2])) for s in ordered}
    station_state: Dict[str, str] = {s[0]: s[3] for s in ordered if len(s) > 3 and s[3]}

    by_zip: Dict[str, List[Tuple[float, float]]] = defaultdict(list)
    zip_state: Dict[str, Counter] = defaultdict(Counter)
    for e in traffic:
        if isinstance(e.loc, TrafficLocation) and e.loc.zipcode:
            by_zip[e.loc.zipcode].append((e.loc.lat, e.loc.lon))
            zip_state[e.loc.zipcode][e.loc.state] += 1

    zip_to_station: Dict[str, str] = {}
    if by_zip:
        zips = sorted(by_zip)
        centroids = np.array([np.mean(by_zip[z], axis=0) for z in zips])
        station_rad = np.radians(np.array([coords[c] for c in codes]))
        dist = haversine_distances(np.radians(centroids), station_rad)
        for i, z in enumerate(zips):
            # argmin returns the first minimum; codes are sorted
            zip_to_station[z] = codes[int(np.argmin(dist[i]))]

    inferred: Dict[str, Counter] = defaultdict(Counter)
    for z, code in zip_to_station.items():
        inferred[code].update(zip_state[z])
    for code, counts in inferred.items():
        if code not in station_state and counts:
            station_state[code] = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    logger.info(f"Station index: {len(coords)} stations, {len(zip_to_station)} zipcodes mapped")
    return StationIndex(stations=coords, zip_to_station=zip_to_station, station_state=station_state)


def attach_station_coordinates(entities: Sequence[GeoEntity], idx: StationIndex) -> List[GeoEntity]:
    """Fills weather entity lat/lon from the station index; other entities pass through unchanged."""
    out: List[GeoEntity] = []
    missing = 0
    for e in entities:
        if isinstance(e.loc, WeatherLocation) and e.loc.lat is None:
            coords: Optional[Tuple[float, float]] = idx.stations.get(e.loc.airport_code)
            if coords is None:
                missing += 1
            else:
                e = replace(e, loc=WeatherLocation(e.loc.airport_code, coords[0], coords[1]))
        out.append(e)
    if missing:
        logger.warning(f"{missing} weather entities reference stations missing from the index")
    return out
