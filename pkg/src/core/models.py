# /src/core/models.py
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple, Union

TRAFFIC_TYPES: Tuple[str, ...] = (
    "Accident", "Broken-Vehicle", "Congestion", "Construction",
    "Event", "Lane-Blocked", "Flow-Incident",
)
WEATHER_TYPES: Tuple[str, ...] = (
    "Severe-Cold", "Fog", "Hail", "Rain", "Snow", "Storm", "Precipitation",
)

# Contiguous US (DC counted as a state), 49 codes
CONTIGUOUS_US_STATES: Tuple[str, ...] = (
    "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "IA", "ID", "IL",
    "IN", "KS", "KY", "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC",
    "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH", "OK", "OR", "PA", "RI", "SC",
    "SD", "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY",
)

COMPOSITE_SEPARATOR = "_"


class EntityKind(str, Enum):
    TRAFFIC = "Traffic"
    WEATHER = "Weather"


class StreetSide(str, Enum):
    RIGHT = "R"
    LEFT = "L"
    UNKNOWN = "Unknown"


def taxonomy_for(kind: EntityKind) -> Tuple[str, ...]:
    return TRAFFIC_TYPES if kind == EntityKind.TRAFFIC else WEATHER_TYPES


def kind_of_label(label: str) -> Optional[EntityKind]:
    """Returns the kind owning a base label, or None for unknown labels."""
    if label in TRAFFIC_TYPES:
        return EntityKind.TRAFFIC
    if label in WEATHER_TYPES:
        return EntityKind.WEATHER
    return None


def split_label(label: str) -> List[str]:
    return label.split(COMPOSITE_SEPARATOR)


def composite_label(labels: Iterable[str]) -> str:
    """Canonical label for a set of (possibly composite) labels: sorted, de-duplicated, '_'-joined."""
    parts = set()
    for label in labels:
        parts.update(split_label(label))
    return COMPOSITE_SEPARATOR.join(sorted(parts))


def is_composite(label: str) -> bool:
    return COMPOSITE_SEPARATOR in label


def is_canonical_composite(label: str) -> bool:
    parts = split_label(label)
    return (
        len(parts) >= 2
        and parts == sorted(set(parts))
        and all(kind_of_label(p) is not None for p in parts)
    )


@dataclass(frozen=True)
class EntityType:
    kind: EntityKind
    label: str

    @property
    def is_weather(self) -> bool:
        return self.kind == EntityKind.WEATHER


@dataclass(frozen=True)
class TrafficLocation:
    lat: float
    lon: float
    street_name: str
    street_side: StreetSide
    zipcode: str
    city: str
    state: str

    def address_key(self) -> Tuple[str, str, str, str, str]:
        """Every location field except the coordinates; equal keys mean 'location matching'."""
        return (self.street_name, self.street_side.value, self.zipcode, self.city, self.state)


@dataclass(frozen=True)
class WeatherLocation:
    airport_code: str
    lat: Optional[float] = None
    lon: Optional[float] = None


Location = Union[TrafficLocation, WeatherLocation]


@dataclass(frozen=True)
class GeoEntity:
    """One typed traffic or weather occurrence: <type, start, end, loc>. Times are UTC epoch seconds."""
    id: str
    etype: EntityType
    start: int
    end: int
    loc: Location
    severity: Optional[str] = None

    @property
    def label(self) -> str:
        return self.etype.label

    @property
    def is_weather(self) -> bool:
        return self.etype.kind == EntityKind.WEATHER

    @property
    def duration(self) -> int:
        return self.end - self.start

    @property
    def coordinates(self) -> Optional[Tuple[float, float]]:
        if self.loc.lat is None or self.loc.lon is None:
            return None
        return (self.loc.lat, self.loc.lon)


def validate_entity(e: GeoEntity, allowed_states: Optional[Iterable[str]] = CONTIGUOUS_US_STATES) -> List[str]:
    """
    Checks every GeoEntity invariant and returns the violations found (empty list = valid).
    Violations are data, never raised.
    """
    violations: List[str] = []
    if not e.id:
        violations.append("empty id")
    if e.start > e.end:
        violations.append("start after end")

    label = e.etype.label
    if is_composite(label):
        violations.append("composite label on a plain entity")
    elif label not in taxonomy_for(e.etype.kind):
        violations.append(f"unknown label '{label}' for kind {e.etype.kind.value}")

    if e.etype.kind == EntityKind.TRAFFIC:
        if not isinstance(e.loc, TrafficLocation):
            violations.append("traffic entity without TrafficLocation")
            return violations
        if not -90.0 <= e.loc.lat <= 90.0:
            violations.append("lat out of range")
        if not -180.0 <= e.loc.lon <= 180.0:
            violations.append("lon out of range")
        if allowed_states is not None and e.loc.state not in set(allowed_states):
            violations.append(f"state '{e.loc.state}' not allowed")
    else:
        if not isinstance(e.loc, WeatherLocation):
            violations.append("weather entity without WeatherLocation")
            return violations
        if not e.loc.airport_code:
            violations.append("empty airport code")
        if e.loc.lat is not None and not -90.0 <= e.loc.lat <= 90.0:
            violations.append("lat out of range")
        if e.loc.lon is not None and not -180.0 <= e.loc.lon <= 180.0:
            violations.append("lon out of range")
    return violations


@dataclass(frozen=True)
class StationIndex:
    """Airport stations and the zipcode → nearest-station mapping used for weather/traffic collocation."""
    stations: Dict[str, Tuple[float, float]]
    zip_to_station: Dict[str, str]
    station_state: Dict[str, str] = field(default_factory=dict)

    def station_for_zip(self, zipcode: str) -> Optional[str]:
        return self.zip_to_station.get(zipcode)


@dataclass(frozen=True)
class LongEntity:
    """A long-duration entity, possibly the merge of several overlapping ones."""
    id: str
    label: str
    start: int
    end: int
    member_ids: FrozenSet[str]
    center: Optional[Tuple[float, float]] = None
    airport_code: Optional[str] = None
    zipcodes: FrozenSet[str] = frozenset()
    state: Optional[str] = None
    traffic_members: int = 0
    mixed: bool = False

    @property
    def duration(self) -> int:
        return self.end - self.start

    @property
    def is_weather_only(self) -> bool:
        return self.center is None


def to_epoch(value: datetime) -> int:
    """Naive datetimes are taken as UTC."""
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return int(value.timestamp())


def to_iso(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
