# /src/ingestion/parser.py
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Mapping, Optional, Protocol, TextIO, Tuple, Type

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..core.errors import DataError
from ..core.models import (
    CONTIGUOUS_US_STATES, EntityKind, EntityType, GeoEntity, StreetSide, TrafficLocation,
    WeatherLocation, kind_of_label, to_epoch, to_iso, validate_entity,
)
from .weather import Condition, WeatherObservation

logger = logging.getLogger(__name__)

TRAFFIC_COLUMNS = ["id", "type", "start", "end", "lat", "lon", "street_name", "street_side", "zipcode", "city", "state"]
WEATHER_COLUMNS = ["id", "type", "start", "end", "airport_code"]
OBSERVATION_COLUMNS = ["station", "timestamp", "temperature", "humidity", "wind_speed", "pressure",
                       "precipitation", "condition"]
STATION_COLUMNS = ["airport_code", "lat", "lon"]

ADDRESS_FIELDS = ("street_name", "zipcode", "city", "state")
_BAD_LINE = "\x00bad-line"


class Geocoder(Protocol):
    """Reverse geocoder filling blank address fields of traffic rows. No implementation is bundled."""

    def geocode(self, lat: float, lon: float) -> Mapping[str, str]:
        ...


class _Row(BaseModel):
    model_config = ConfigDict(coerce_numbers_to_str=True, extra="ignore", str_strip_whitespace=True)


class TrafficRow(_Row):
    id: str
    type: str
    start: datetime
    end: datetime
    lat: float
    lon: float
    street_name: str = ""
    street_side: StreetSide = StreetSide.UNKNOWN
    zipcode: str = ""
    city: str = ""
    state: str = ""
    severity: Optional[str] = None

    @field_validator("street_side", mode="before")
    @classmethod
    def _blank_side(cls, value: Any) -> Any:
        return StreetSide.UNKNOWN if value in ("", None) else value


class WeatherRow(_Row):
    id: str
    type: str
    start: datetime
    end: datetime
    airport_code: str
    severity: Optional[str] = None


class ObservationRow(_Row):
    station: str
    timestamp: datetime
    temperature: float
    humidity: float
    wind_speed: float = Field(ge=0)
    pressure: float
    precipitation: float = Field(ge=0)
    condition: Condition


class StationRow(_Row):
    airport_code: str = Field(min_length=1)
    lat: float = Field(ge=-90, le=90)
    lon: float = Field(ge=-180, le=180)
    state: Optional[str] = None


@dataclass
class ParseResult:
    """Parsed items in file order plus rejected rows (each row + `reject_reason`)."""
    items: List[Any] = field(default_factory=list)
    rejects: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def rows(self) -> int:
        return len(self.items) + len(self.rejects)


def read_records(stream: TextIO, required: List[str]) -> List[Dict[str, Any]]:
    """Reads CSV (header required) or JSON-lines records; the first non-blank character decides."""
    try:
        text = stream.read()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"Unreadable input stream: {e}") from e
    stripped = text.lstrip()
    if not stripped:
        return []
    if stripped.startswith("{"):
        records = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                records.append({"_raw": line, "_error": f"invalid JSON line {lineno}: {e.msg}"})
                continue
            records.append(obj if isinstance(obj, dict) else {"_raw": line, "_error": "not a JSON object"})
        return records
    return _read_csv_records(text, required)


def _read_csv_records(text: str, required: List[str]) -> List[Dict[str, Any]]:
    """CSV rows as dicts; rows with the wrong field count come back as `_error` records in file order."""
    try:
        header = list(pd.read_csv(io.StringIO(text), dtype=str, nrows=0).columns)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Malformed CSV header: {e}") from e
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"CSV header lacks required columns: {', '.join(missing)}")
    width = len(header)

    def too_long(fields: List[str]) -> List[str]:
        # stand-in row, recognised below by its first cell
        return [_BAD_LINE, str(len(fields)), ",".join(fields)] + [""] * (width - 3)

    # A well-formed first body row keeps pandas from reading a long first row as an implicit index.
    head, _, body = text.lstrip("\r\n").partition("\n")
    padded = f"{head}\n{','.join([_BAD_LINE] * width)}\n{body}"
    try:
        df = pd.read_csv(io.StringIO(padded), dtype=str, keep_default_na=False,
                         engine="python", on_bad_lines=too_long)
    except pd.errors.ParserError as e:
        raise DataError(f"Malformed CSV input: {e}") from e

    records = []
    for row_number, record in enumerate(df.iloc[1:].to_dict("records"), start=1):
        if record[header[0]] == _BAD_LINE:
            records.append({"_raw": record[header[2]],
                            "_error": f"row {row_number}: expected {width} fields, saw {record[header[1]]}"})
        elif any(not isinstance(v, str) for v in record.values()):
            # short rows are padded with NaN
            kept = {k: v for k, v in record.items() if isinstance(v, str)}
            records.append({**kept, "_error": f"row {row_number}: expected {width} fields, saw {len(kept)}"})
        else:
            records.append(record)
    return records


def _reject(rejects: List[Dict[str, Any]], record: Dict[str, Any], reason: str):
    row = {k: v for k, v in record.items() if not k.startswith("_")}
    if "_raw" in record:
        row["raw"] = record["_raw"]
    row["reject_reason"] = reason
    rejects.append(row)


def _validation_reason(e: ValidationError) -> str:
    first = e.errors()[0]
    where = ".".join(str(p) for p in first.get("loc", ()))
    return f"invalid {where}: {first.get('msg', 'bad value')}" if where else first.get("msg", "invalid row")


def _entity_from_record(record: Dict[str, Any], schema: EntityKind, geocoder: Optional[Geocoder],
                        allowed_states) -> Tuple[Optional[GeoEntity], Optional[str]]:
    model: Type[_Row] = TrafficRow if schema == EntityKind.TRAFFIC else WeatherRow
    try:
        row = model.model_validate(record)
    except ValidationError as e:
        return None, _validation_reason(e)

    if kind_of_label(row.type) != schema:
        return None, f"unknown label '{row.type}' for {schema.value} entities"
    etype = EntityType(schema, row.type)
    severity = row.severity or None

    if schema == EntityKind.TRAFFIC:
        address = {name: getattr(row, name) for name in ADDRESS_FIELDS}
        if geocoder is not None and not all(address.values()):
            filled = geocoder.geocode(row.lat, row.lon)
            address.update({k: v for k, v in filled.items() if k in address and not address[k]})
        loc = TrafficLocation(row.lat, row.lon, address["street_name"], row.street_side,
                              address["zipcode"], address["city"], address["state"])
    else:
        loc = WeatherLocation(row.airport_code)

    entity = GeoEntity(row.id, etype, to_epoch(row.start), to_epoch(row.end), loc, severity)
    violations = validate_entity(entity, allowed_states)
    if violations:
        return None, "; ".join(violations)
    return entity, None


def parse_entities(stream: TextIO, schema: EntityKind, geocoder: Optional[Geocoder] = None,
                   allowed_states=CONTIGUOUS_US_STATES) -> ParseResult:
    """
    Parses traffic or weather entities from a CSV / JSON-lines stream.

    Every row ends up either as an entity (file order kept) or in `rejects` with a reason.
    """
    required = TRAFFIC_COLUMNS if schema == EntityKind.TRAFFIC else WEATHER_COLUMNS
    result = ParseResult()
    for record in read_records(stream, required):
        if "_error" in record:
            _reject(result.rejects, record, record["_error"])
            continue
        entity, reason = _entity_from_record(record, schema, geocoder, allowed_states)
        if entity is None:
            _reject(result.rejects, record, reason)
        else:
            result.items.append(entity)
    logger.info(f"Parsed {len(result.items)} {schema.value} entities, {len(result.rejects)} rejects")
    return result


def parse_observations(stream: TextIO) -> ParseResult:
    result = ParseResult()
    for record in read_records(stream, OBSERVATION_COLUMNS):
        if "_error" in record:
            _reject(result.rejects, record, record["_error"])
            continue
        try:
            row = ObservationRow.model_validate(record)
        except ValidationError as e:
            _reject(result.rejects, record, _validation_reason(e))
            continue
        result.items.append(WeatherObservation(
            row.station, to_epoch(row.timestamp), row.temperature, row.humidity,
            row.wind_speed, row.pressure, row.precipitation, row.condition,
        ))
    logger.info(f"Parsed {len(result.items)} weather observations, {len(result.rejects)} rejects")
    return result


def parse_stations(stream: TextIO) -> ParseResult:
    """Station rows as (airport_code, lat, lon, state-or-None) tuples."""
    result = ParseResult()
    for record in read_records(stream, STATION_COLUMNS):
        if "_error" in record:
            _reject(result.rejects, record, record["_error"])
            continue
        try:
            row = StationRow.model_validate(record)
        except ValidationError as e:
            _reject(result.rejects, record, _validation_reason(e))
            continue
        result.items.append((row.airport_code, row.lat, row.lon, row.state or None))
    logger.info(f"Parsed {len(result.items)} stations, {len(result.rejects)} rejects")
    return result


def entity_to_record(e: GeoEntity) -> Dict[str, Any]:
    """Serializes an entity with the same field names the parser reads."""
    record: Dict[str, Any] = {"id": e.id, "type": e.label, "start": to_iso(e.start), "end": to_iso(e.end)}
    if isinstance(e.loc, TrafficLocation):
        record.update({
            "lat": e.loc.lat, "lon": e.loc.lon, "street_name": e.loc.street_name,
            "street_side": e.loc.street_side.value, "zipcode": e.loc.zipcode,
            "city": e.loc.city, "state": e.loc.state,
        })
    else:
        record["airport_code"] = e.loc.airport_code
    record["severity"] = e.severity or ""
    return record


def entities_to_frame(entities: List[GeoEntity], schema: EntityKind) -> pd.DataFrame:
    columns = (TRAFFIC_COLUMNS if schema == EntityKind.TRAFFIC else WEATHER_COLUMNS) + ["severity"]
    return pd.DataFrame([entity_to_record(e) for e in entities], columns=columns)
