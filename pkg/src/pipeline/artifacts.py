# /src/pipeline/artifacts.py
import logging
import math
import os
from typing import Any, Dict, List, Sequence

import pandas as pd

from ..core.errors import DataError
from ..core.models import EntityKind, GeoEntity, LongEntity, StationIndex, to_iso
from ..ingestion.parser import entities_to_frame, parse_entities
from ..relations.extraction import ChildParentRelation
from ..relations.forest import Forest, forests_from_records, tree_to_record
from ..utils.utils import atomic_write_text, format_float, parse_json_file, parse_json_lines_file, save_json, save_json_lines

logger = logging.getLogger(__name__)

# File names inside the run directory
TRAFFIC_ENTITIES = "entities_traffic.csv"
WEATHER_ENTITIES = "entities_weather.csv"
TRAFFIC_REJECTS = "rejects_traffic.csv"
WEATHER_REJECTS = "rejects_weather.csv"
STATION_INDEX = "station_index.json"
RELATIONS = "relations.csv"
FOREST = "forest.jsonl"
PATTERNS = "patterns.csv"
STATE_PATTERNS = "state_patterns.json"
CLUSTERS = "clusters.json"
LONG_ENTITIES = "long_entities.csv"
RADIUS = "radius.json"
VICINITY = "vicinity.csv"
TESTS = "tests.csv"
THRESHOLDS = "thresholds.json"
REPORTS_DIR = "reports"

RELATION_COLUMNS = ["parent_id", "child_id", "lag_seconds", "distance_m"]
PATTERN_COLUMNS = ["state", "city", "encoding", "node_count", "tree_count", "support", "peak_hours", "flags"]
LONG_COLUMNS = ["id", "label", "start", "end", "lat", "lon", "airport_code", "duration_s", "member_count"]
VICINITY_COLUMNS = ["long_id", "s_r", "s_before", "s_after"]
TEST_BASE_COLUMNS = ["bucket_kind", "bucket_key", "test", "n", "t_stat", "df", "p_value"]


def significance_column(level: float) -> str:
    """0.95 -> 'sig95', 0.975 -> 'sig97.5'."""
    return f"sig{round(level * 100, 6):g}"


def column_level(column: str) -> str:
    """'sig95' -> '0.95', 'sig97.5' -> '0.975'."""
    level = round(float(column[len("sig"):]) / 100, 8)
    return f"{level:.2f}" if round(level, 2) == level else f"{level:g}"


def result_columns(levels: Sequence[float]) -> List[str]:
    return TEST_BASE_COLUMNS + [significance_column(level) for level in levels] + ["impact"]


def frame_to_csv_text(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, lineterminator="\n")


def write_frame(df: pd.DataFrame, path: str) -> str:
    return atomic_write_text(path, frame_to_csv_text(df))


def read_frame(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataError(f"Artifact not found: {path}")
    return pd.read_csv(path, dtype=str, keep_default_na=False)


def write_entities(entities: Sequence[GeoEntity], kind: EntityKind, path: str) -> str:
    return write_frame(entities_to_frame(list(entities), kind), path)


def read_entities(path: str, kind: EntityKind, allowed_states=None) -> List[GeoEntity]:
    with open(path, "r", encoding="utf-8") as f:
        parsed = parse_entities(f, kind, allowed_states=allowed_states)
    if parsed.rejects:
        raise DataError(f"Artifact {path} holds {len(parsed.rejects)} invalid rows")
    return parsed.items


def write_rejects(rejects: Sequence[Dict[str, Any]], path: str) -> str:
    df = pd.DataFrame(list(rejects))
    if "reject_reason" not in df.columns:
        df["reject_reason"] = []
    return write_frame(df, path)


def write_station_index(idx: StationIndex, path: str) -> str:
    return save_json({
        "stations": {code: list(coords) for code, coords in sorted(idx.stations.items())},
        "zip_to_station": dict(sorted(idx.zip_to_station.items())),
        "station_state": dict(sorted(idx.station_state.items())),
    }, path)


def read_station_index(path: str) -> StationIndex:
    data = parse_json_file(path)
    return StationIndex(
        stations={code: (float(c[0]), float(c[1])) for code, c in data["stations"].items()},
        zip_to_station=dict(data["zip_to_station"]),
        station_state=dict(data.get("station_state", {})),
    )


def write_relations(relations: Sequence[ChildParentRelation], path: str) -> str:
    df = pd.DataFrame([
        [r.parent_id, r.child_id, str(r.lag), format_float(r.distance)] for r in relations
    ], columns=RELATION_COLUMNS)
    return write_frame(df, path)


def read_relations(path: str) -> List[ChildParentRelation]:
    df = read_frame(path)
    return [
        ChildParentRelation(row.parent_id, row.child_id, int(row.lag_seconds),
                            float(row.distance_m) if row.distance_m else None)
        for row in df.itertuples(index=False)
    ]


def write_forests(forests: Sequence[Forest], path: str) -> str:
    return save_json_lines((tree_to_record(f.partition_key, t) for f in forests for t in f.trees), path)


def read_forests(path: str) -> List[Forest]:
    if not os.path.exists(path):
        raise DataError(f"Artifact not found: {path}")
    return forests_from_records(parse_json_lines_file(path))


def write_long_entities(longs: Sequence[LongEntity], path: str) -> str:
    rows = []
    for l in longs:
        lat, lon = (format_float(l.center[0]), format_float(l.center[1])) if l.center else ("", "")
        rows.append([l.id, l.label, to_iso(l.start), to_iso(l.end), lat, lon, l.airport_code or "",
                     str(l.duration), str(len(l.member_ids))])
    return write_frame(pd.DataFrame(rows, columns=LONG_COLUMNS), path)


def write_records(rows: Sequence[Dict[str, Any]], columns: List[str], path: str) -> str:
    return write_frame(pd.DataFrame(list(rows), columns=columns), path)


def json_safe(value: Any) -> Any:
    """Rounds floats to 6 significant digits, recursively; inf/nan become strings."""
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return format_float(value)
        return float(format_float(value))
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value
