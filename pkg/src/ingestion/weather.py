# /src/ingestion/weather.py
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DataError
from ..core.models import EntityKind, EntityType, GeoEntity, StationIndex, WeatherLocation
from ..numerics.kmeans import kmeans
from .stations import attach_station_coordinates

logger = logging.getLogger(__name__)


class Condition(str, Enum):
    CLEAR = "Clear"
    SNOW = "Snow"
    RAIN = "Rain"
    FOG = "Fog"
    HAIL = "Hail"
    THUNDERSTORM = "Thunderstorm"


@dataclass(frozen=True)
class WeatherObservation:
    station: str
    timestamp: int  # UTC epoch seconds
    temperature: float  # °C
    humidity: float  # fraction
    wind_speed: float  # km/h
    pressure: float  # hPa
    precipitation: float  # mm
    condition: Condition


@dataclass(frozen=True)
class WeatherThresholds:
    temperature_centers: Tuple[float, ...]
    wind_centers: Tuple[float, ...]
    rain_centers: Tuple[float, ...]
    snow_centers: Tuple[float, ...]

    def __post_init__(self):
        expected = {"temperature_centers": 5, "wind_centers": 3, "rain_centers": 3, "snow_centers": 3}
        for name, size in expected.items():
            values = getattr(self, name)
            if len(values) != size:
                raise DataError(f"{name} needs exactly {size} values (got {len(values)})")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise DataError(f"{name} must be strictly ascending: {values}")

    def to_dict(self) -> Dict[str, List[float]]:
        return {
            "temperature_centers": list(self.temperature_centers),
            "wind_centers": list(self.wind_centers),
            "rain_centers": list(self.rain_centers),
            "snow_centers": list(self.snow_centers),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "WeatherThresholds":
        return cls(**{k: tuple(float(v) for v in data[k]) for k in
                      ("temperature_centers", "wind_centers", "rain_centers", "snow_centers")})


DEFAULT_THRESHOLDS = WeatherThresholds(
    temperature_centers=(-23.7, -8.6, 6.7, 21.3, 35.8),
    wind_centers=(13.2, 36.2, 60.0),
    rain_centers=(2.5, 7.1, 11.6),
    snow_centers=(0.6, 1.7, 2.5),
)

INTENSITY_NAMES = ("light", "moderate", "heavy")


def _centers_1d(name: str, values: Sequence[float], k: int, seed: int, restarts: int) -> Tuple[float, ...]:
    uniques, counts = np.unique(np.asarray(values, dtype=float), return_counts=True)
    if uniques.size < k:
        raise DataError(f"insufficient distinct values for {name}: need {k}, got {uniques.size}")
    clustering = kmeans(uniques, k, seed=seed, restarts=restarts, weights=counts)
    centers = tuple(sorted(float(c) for c in clustering.centers[:, 0]))
    logger.info(f"Derived {name} centers: {', '.join(f'{c:.2f}' for c in centers)}")
    return centers


def derive_thresholds(observations: Sequence[WeatherObservation], seed: int, restarts: int = 8) -> WeatherThresholds:
    """1-D K-means on temperature (K=5), wind speed, rain and snow precipitation (K=3 each)."""
    temps = [o.temperature for o in observations]
    winds = [o.wind_speed for o in observations]
    rain = [o.precipitation for o in observations if o.condition == Condition.RAIN]
    snow = [o.precipitation for o in observations if o.condition == Condition.SNOW]
    return WeatherThresholds(
        temperature_centers=_centers_1d("temperature", temps, 5, seed, restarts),
        wind_centers=_centers_1d("wind_speed", winds, 3, seed, restarts),
        rain_centers=_centers_1d("rain precipitation", rain, 3, seed, restarts),
        snow_centers=_centers_1d("snow precipitation", snow, 3, seed, restarts),
    )


def _intensity(value: float, centers: Sequence[float]) -> str:
    # nearest center; ties go to the lower level
    idx = min(range(len(centers)), key=lambda i: (abs(value - centers[i]), i))
    return INTENSITY_NAMES[idx]


def observation_labels(o: WeatherObservation, th: WeatherThresholds) -> Dict[str, Optional[str]]:
    """Candidate weather labels of one observation, label -> severity annotation."""
    labels: Dict[str, Optional[str]] = {}
    if o.condition == Condition.FOG:
        labels["Fog"] = None
    elif o.condition == Condition.HAIL:
        labels["Hail"] = None
    elif o.condition == Condition.RAIN:
        labels["Rain"] = _intensity(o.precipitation, th.rain_centers)
    elif o.condition == Condition.SNOW:
        labels["Snow"] = _intensity(o.precipitation, th.snow_centers)
    if o.wind_speed >= th.wind_centers[2]:
        labels["Storm"] = None
    if o.temperature <= th.temperature_centers[0]:
        labels["Severe-Cold"] = None
    if o.precipitation > 0 and o.condition not in (Condition.RAIN, Condition.SNOW):
        labels["Precipitation"] = None
    return labels


_SEVERITY_RANK = {None: -1, "light": 0, "moderate": 1, "heavy": 2}


def extract_weather_entities(observations: Sequence[WeatherObservation], th: WeatherThresholds,
                             max_gap: int = 21600, idx: Optional[StationIndex] = None) -> List[GeoEntity]:
    """
    Turns per-station observation streams into weather entities.

    Consecutive observations at one station carrying the same label, with gaps of at most
    `max_gap` seconds, merge into one entity spanning first to last timestamp. An observation
    without the label, or a larger gap, closes the open entity. The entity severity is the
    strongest intensity seen. Station coordinates are attached when `idx` knows the station.
    """
    if max_gap <= 0:
        raise DataError(f"max_gap must be > 0 (got {max_gap})")
    keys = [(o.station, o.timestamp) for o in observations]
    if any(b < a for a, b in zip(keys, keys[1:])):
        raise DataError("Observations must be sorted by (station, timestamp)")

    entities: List[GeoEntity] = []
    # label -> [start, last, severity, station]
    open_runs: Dict[str, list] = {}

    def close(label: str):
        start, last, severity, station = open_runs.pop(label)
        entities.append(GeoEntity(
            id=f"W-{station}-{label}-{start}",
            etype=EntityType(EntityKind.WEATHER, label),
            start=start, end=last, loc=WeatherLocation(station), severity=severity,
        ))

    current_station = None
    for o in observations:
        if o.station != current_station:
            for label in sorted(open_runs):
                close(label)
            current_station = o.station
        labels = observation_labels(o, th)
        for label in sorted(open_runs):
            run = open_runs[label]
            if label not in labels or o.timestamp - run[1] > max_gap:
                close(label)
        for label, severity in labels.items():
            run = open_runs.get(label)
            if run is None:
                open_runs[label] = [o.timestamp, o.timestamp, severity, o.station]
            else:
                run[1] = o.timestamp
                if _SEVERITY_RANK[severity] > _SEVERITY_RANK[run[2]]:
                    run[2] = severity
    for label in sorted(open_runs):
        close(label)

    entities.sort(key=lambda e: (e.loc.airport_code, e.start, e.label))
    if idx is not None:
        entities = attach_station_coordinates(entities, idx)
    logger.info(f"Extracted {len(entities)} weather entities from {len(observations)} observations")
    return entities
