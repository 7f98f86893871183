# /src/pipeline/reports.py
import logging
import os
from typing import Any, Dict, List

from ..core.errors import ConfigError, DataError
from ..utils.utils import parse_json_file, save_json
from . import artifacts as A
from .stages import RunManifest, upstream_artifact

logger = logging.getLogger(__name__)

REPORT_KINDS = ("short_patterns", "clusters", "longterm")
REPORT_FORMATS = ("csv", "json")

# Published statistics of the full countrywide dataset, for replication runs.
REFERENCE_VALUES = {
    "relations": 5_952_729,
    "trees": 1_723_637,
    "unique_patterns": 90,
    "long_threshold_min": 300.0,
}


def _number(text: str) -> Any:
    if text in ("nan", "inf", "-inf"):
        return text
    return float(text) if text else None


def _short_patterns(manifest: RunManifest, fmt: str, path: str):
    df = A.read_frame(upstream_artifact(manifest, A.PATTERNS)[0])
    if fmt == "csv":
        return A.write_frame(df[A.PATTERN_COLUMNS], path)
    rows = [
        {
            "state": r["state"], "city": r["city"], "encoding": r["encoding"],
            "node_count": int(r["node_count"]), "tree_count": int(r["tree_count"]),
            "support": float(r["support"]), "peak_hours": r["peak_hours"] or None,
            "flags": [f for f in r["flags"].split(";") if f],
        }
        for r in df.to_dict("records")
    ]
    return save_json({"peak_hours_rule": "heuristic", "patterns": rows}, path)


def _clusters(manifest: RunManifest, fmt: str, path: str):
    data = parse_json_file(upstream_artifact(manifest, A.CLUSTERS)[0])
    if fmt == "json":
        return save_json(data, path)
    rows = [
        {"k": str(data["k"]), "cluster_id": str(c["id"]), "states": ";".join(c["states"]),
         "distinguishing": ";".join(c["distinguishing"])}
        for c in data["clusters"]
    ]
    return A.write_records(rows, ["k", "cluster_id", "states", "distinguishing"], path)


def _longterm(manifest: RunManifest, fmt: str, path: str):
    df = A.read_frame(upstream_artifact(manifest, A.TESTS)[0])
    sig_columns = [c for c in df.columns if c.startswith("sig")]
    if fmt == "csv":
        return A.write_frame(df[A.TEST_BASE_COLUMNS + sig_columns + ["impact"]], path)
    tests: List[Dict[str, Any]] = []
    impacts: Dict[tuple, Dict[str, Any]] = {}
    for r in df.to_dict("records"):
        tests.append({
            "bucket_kind": r["bucket_kind"], "bucket_key": r["bucket_key"], "test": r["test"],
            "n": int(r["n"]), "t_stat": _number(r["t_stat"]), "df": _number(r["df"]),
            "p_value": _number(r["p_value"]),
            "significant": {A.column_level(c): r[c] == "1" for c in sig_columns},
        })
        impacts[(r["bucket_kind"], r["bucket_key"])] = {
            "bucket_kind": r["bucket_kind"], "bucket_key": r["bucket_key"], "n": int(r["n"]), "impact": r["impact"],
        }
    return save_json({"tests": tests, "impact": [impacts[k] for k in impacts]}, path)


_EMITTERS = {"short_patterns": _short_patterns, "clusters": _clusters, "longterm": _longterm}


def emit_report(kind: str, fmt: str, manifest: RunManifest) -> str:
    """
    Writes reports/<kind>.<fmt> from the stage artifacts and returns its path relative to the run
    directory. Rows keep the sorted order of the artifacts; floats keep their 6-digit formatting.

    Raises:
        ConfigError: unknown kind or format.
        StaleArtifactError: the stage producing the underlying artifact has not run or is stale.
    """
    if kind not in _EMITTERS:
        raise ConfigError(f"Unknown report kind '{kind}' (expected one of {', '.join(REPORT_KINDS)})")
    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"Unknown report format '{fmt}' (expected csv or json)")
    name = os.path.join(A.REPORTS_DIR, f"{kind}.{fmt}")
    _EMITTERS[kind](manifest, fmt, manifest.path(name))
    logger.info(f"Report written: {name}")
    return name


def replication_summary(manifest: RunManifest) -> List[Dict[str, Any]]:
    """Run statistics next to the published reference values; missing stages leave blanks."""
    def result(stage: str, key: str):
        record = manifest.stages.get(stage)
        return record.result.get(key) if record is not None else None

    observed = {
        "relations": result("relations", "relations"),
        "trees": result("forest", "trees"),
        "unique_patterns": result("mine", "patterns"),
        "long_threshold_min": result("longterm", "threshold_min"),
    }
    if all(v is None for v in observed.values()):
        raise DataError(f"No stage results recorded in {manifest.out_dir}; run the pipeline first")
    rows = []
    for name, reference in REFERENCE_VALUES.items():
        value = observed[name]
        ratio = value / reference if value is not None else None
        rows.append({"statistic": name, "observed": value, "reference": reference,
                     "ratio": A.json_safe(ratio) if ratio is not None else None})
    return rows


def write_replication_summary(manifest: RunManifest) -> str:
    rows = replication_summary(manifest)
    path = manifest.path(os.path.join(A.REPORTS_DIR, "replication_summary.json"))
    save_json(rows, path)
    return path
