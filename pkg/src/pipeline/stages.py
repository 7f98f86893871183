# /src/pipeline/stages.py
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from ..core.config import PipelineConfig, config_digest, dump_config
from ..core.errors import ConfigError, DataError, StaleArtifactError
from ..core.models import EntityKind, GeoEntity, StationIndex
from ..ingestion.cleaning import dataset_summary, deduplicate
from ..ingestion.parser import parse_entities, parse_observations, parse_stations
from ..ingestion.stations import build_station_index
from ..ingestion.weather import DEFAULT_THRESHOLDS, derive_thresholds, extract_weather_entities
from ..longterm.entities import extract_long_entities, long_duration_threshold, merge_overlaps, type_frequency
from ..longterm.testing import BucketKind, impact_summary, run_all_tests, bucketize
from ..longterm.vicinity import RadiusEstimate, compute_all_vicinity_counts, estimate_vicinity_radius, sample_entities
from ..mining.metadata import (
    core_state_patterns, pattern_occurrence_metadata, pattern_root_summary, pattern_streets, road_type,
)
from ..mining.miner import FrequentPattern, mine
from ..mining.patterns import TreePattern
from ..regions.profiler import build_state_vectors, cluster_states
from ..relations.extraction import dependency_summary, extract_relations
from ..relations.forest import Forest, build_forest, forest_summary, resolve_parents
from ..utils.utils import file_digest, format_float, parse_json_file, save_json
from . import artifacts as A

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"

# Artifacts each stage reads; raw inputs of the ingest stage come from the config.
STAGE_INPUTS: Dict[str, List[str]] = {
    "ingest": [],
    "relations": [A.TRAFFIC_ENTITIES, A.WEATHER_ENTITIES, A.STATION_INDEX],
    "forest": [A.RELATIONS, A.TRAFFIC_ENTITIES, A.WEATHER_ENTITIES],
    "mine": [A.FOREST],
    "regions": [A.STATE_PATTERNS],
    "longterm": [A.TRAFFIC_ENTITIES, A.WEATHER_ENTITIES, A.STATION_INDEX],
    "report": [A.PATTERNS, A.CLUSTERS, A.TESTS],
}

ARTIFACT_PRODUCER: Dict[str, str] = {
    A.TRAFFIC_ENTITIES: "ingest", A.WEATHER_ENTITIES: "ingest", A.STATION_INDEX: "ingest",
    A.RELATIONS: "relations", A.FOREST: "forest",
    A.PATTERNS: "mine", A.STATE_PATTERNS: "mine",
    A.CLUSTERS: "regions", A.TESTS: "longterm",
}

RAW_INPUT_FIELDS = ("traffic_path", "weather_path", "observations_path", "stations_path")


class StageRecord(BaseModel):
    stage: str
    status: str = "done"  # done, cached
    config_digest: str
    inputs: Dict[str, str] = Field(default_factory=dict)  # artifact or raw input -> sha256
    outputs: Dict[str, str] = Field(default_factory=dict)  # artifact path relative to out_dir -> sha256
    wall_time: float = 0.0
    result: Dict[str, Any] = Field(default_factory=dict)


class RunManifest(BaseModel):
    """Config snapshot plus per-stage artifact digests of one output directory."""
    out_dir: str
    config: str = ""
    config_digest: str = ""
    stages: Dict[str, StageRecord] = Field(default_factory=dict)

    @classmethod
    def load(cls, out_dir: str) -> "RunManifest":
        path = os.path.join(out_dir, MANIFEST)
        if not os.path.exists(path):
            return cls(out_dir=out_dir)
        try:
            manifest = cls.model_validate({**parse_json_file(path), "out_dir": out_dir})
        except (ValueError, OSError) as e:
            raise DataError(f"Unreadable run manifest {path}: {e}") from e
        manifest.out_dir = out_dir
        return manifest

    def save(self) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        data = self.model_dump()
        data.pop("out_dir")
        return save_json(data, os.path.join(self.out_dir, MANIFEST))

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)


def upstream_artifact(manifest: RunManifest, name: str) -> Tuple[str, str]:
    """
    Path and digest of an artifact written by an earlier stage.

    Raises:
        StaleArtifactError: the producing stage never ran, the file is gone or its bytes changed.
    """
    producer = ARTIFACT_PRODUCER[name]
    record = manifest.stages.get(producer)
    path = manifest.path(name)
    if record is None or name not in record.outputs:
        raise StaleArtifactError(f"Artifact {name} has not been produced", producer)
    if not os.path.exists(path):
        raise StaleArtifactError(f"Artifact {path} is missing", producer)
    digest = file_digest(path)
    if digest != record.outputs[name]:
        raise StaleArtifactError(f"Artifact {path} does not match its recorded digest", producer)
    return path, digest


def _collect_inputs(stage: str, cfg: PipelineConfig, manifest: RunManifest) -> Dict[str, str]:
    inputs: Dict[str, str] = {}
    if stage == "ingest":
        for field in RAW_INPUT_FIELDS:
            path = getattr(cfg, field)
            if path is None:
                continue
            if not os.path.exists(path):
                raise DataError(f"Input file for {field} not found: {path}")
            inputs[f"{field}:{os.path.abspath(path)}"] = file_digest(path)
        return inputs
    for name in STAGE_INPUTS[stage]:
        inputs[name] = upstream_artifact(manifest, name)[1]
    return inputs


def _outputs_intact(manifest: RunManifest, record: StageRecord) -> bool:
    for name, digest in record.outputs.items():
        path = manifest.path(name)
        if not os.path.exists(path) or file_digest(path) != digest:
            logger.info(f"Output {name} of stage '{record.stage}' is missing or changed")
            return False
    return True


def run_stage(stage: str, manifest: RunManifest, cfg: PipelineConfig) -> RunManifest:
    """
    Runs one stage unless its recorded outputs are still valid for the current config and inputs.

    Upstream artifacts must exist with the digests recorded by the stage that wrote them.
    Outputs are written atomically and their digests recorded; the manifest is saved after
    every stage.
    """
    if stage not in STAGE_BODIES:
        raise ConfigError(f"Unknown stage '{stage}'")
    inputs = _collect_inputs(stage, cfg, manifest)
    digest = config_digest(cfg)
    manifest.config = dump_config(cfg)
    manifest.config_digest = digest

    record = manifest.stages.get(stage)
    if (record is not None and record.config_digest == digest and record.inputs == inputs
            and _outputs_intact(manifest, record)):
        logger.info(f"Stage '{stage}': cache hit, reusing {len(record.outputs)} artifacts")
        record.status = "cached"
        manifest.save()
        return manifest

    logger.info(f"Stage '{stage}': running")
    started = time.perf_counter()
    outputs, result = STAGE_BODIES[stage](cfg, manifest)
    wall_time = time.perf_counter() - started
    manifest.stages[stage] = StageRecord(
        stage=stage, config_digest=digest, inputs=inputs,
        outputs={name: file_digest(manifest.path(name)) for name in sorted(outputs)},
        wall_time=round(wall_time, 3), result=A.json_safe(result),
    )
    manifest.save()
    logger.info(f"Stage '{stage}' finished in {wall_time:.2f}s, {len(outputs)} artifacts")
    return manifest


# ---------------------------------------------------------------- loaders

def _parse_file(path: str, parse: Callable, *args, **kwargs):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse(f, *args, **kwargs)
    except OSError as e:
        raise DataError(f"Cannot read {path}: {e}") from e


def load_entities(cfg: PipelineConfig, manifest: RunManifest) -> Tuple[List[GeoEntity], List[GeoEntity]]:
    traffic_path, _ = upstream_artifact(manifest, A.TRAFFIC_ENTITIES)
    weather_path, _ = upstream_artifact(manifest, A.WEATHER_ENTITIES)
    return (A.read_entities(traffic_path, EntityKind.TRAFFIC, cfg.allowed_states),
            A.read_entities(weather_path, EntityKind.WEATHER, cfg.allowed_states))


def load_station_index(manifest: RunManifest) -> StationIndex:
    return A.read_station_index(upstream_artifact(manifest, A.STATION_INDEX)[0])


# ---------------------------------------------------------------- stage bodies

StageResult = Tuple[List[str], Dict[str, Any]]


def _ingest(cfg: PipelineConfig, manifest: RunManifest) -> StageResult:
    if not cfg.traffic_path:
        raise ConfigError("traffic_path is required for ingest")
    parsed_traffic = _parse_file(cfg.traffic_path, parse_entities, EntityKind.TRAFFIC,
                                 allowed_states=cfg.allowed_states)
    stations = _parse_file(cfg.stations_path, parse_stations).items if cfg.stations_path else []
    outputs = [A.TRAFFIC_ENTITIES, A.WEATHER_ENTITIES, A.TRAFFIC_REJECTS, A.WEATHER_REJECTS,
               A.STATION_INDEX, "dataset_summary.json"]

    weather_rejects: List[Dict[str, Any]] = []
    if cfg.weather_path:
        parsed_weather = _parse_file(cfg.weather_path, parse_entities, EntityKind.WEATHER,
                                     allowed_states=cfg.allowed_states)
        weather, weather_rejects = parsed_weather.items, parsed_weather.rejects
    elif cfg.observations_path:
        observations = _parse_file(cfg.observations_path, parse_observations)
        weather_rejects = observations.rejects
        thresholds = (derive_thresholds(observations.items, seed=cfg.rng_seed)
                      if cfg.derive_weather_thresholds else DEFAULT_THRESHOLDS)
        save_json(thresholds.to_dict(), manifest.path(A.THRESHOLDS))
        outputs.append(A.THRESHOLDS)
        ordered = sorted(observations.items, key=lambda o: (o.station, o.timestamp))
        weather = extract_weather_entities(ordered, thresholds, max_gap=cfg.weather_max_gap)
    else:
        logger.warning("No weather_path or observations_path configured; ingesting traffic only")
        weather = []

    traffic, dropped_traffic = deduplicate(parsed_traffic.items)
    weather, dropped_weather = deduplicate(weather)
    if weather and not stations:
        raise ConfigError("stations_path is required when weather entities are ingested")
    idx = build_station_index(stations, traffic) if stations else StationIndex({}, {}, {})

    A.write_entities(traffic, EntityKind.TRAFFIC, manifest.path(A.TRAFFIC_ENTITIES))
    A.write_entities(weather, EntityKind.WEATHER, manifest.path(A.WEATHER_ENTITIES))
    A.write_rejects(parsed_traffic.rejects, manifest.path(A.TRAFFIC_REJECTS))
    A.write_rejects(weather_rejects, manifest.path(A.WEATHER_REJECTS))
    A.write_station_index(idx, manifest.path(A.STATION_INDEX))
    save_json(A.json_safe(dataset_summary(traffic + weather)), manifest.path("dataset_summary.json"))
    if parsed_traffic.rejects or weather_rejects:
        logger.warning(f"Rejected {len(parsed_traffic.rejects)} traffic and {len(weather_rejects)} weather rows")
    return outputs, {
        "traffic": len(traffic), "weather": len(weather),
        "traffic_rejects": len(parsed_traffic.rejects), "weather_rejects": len(weather_rejects),
        "duplicates": len(dropped_traffic) + len(dropped_weather), "stations": len(idx.stations),
    }


def _relations(cfg: PipelineConfig, manifest: RunManifest) -> StageResult:
    traffic, weather = load_entities(cfg, manifest)
    idx = load_station_index(manifest)
    entities = traffic + weather
    relations = extract_relations(entities, cfg, idx)
    A.write_relations(relations, manifest.path(A.RELATIONS))
    result = dependency_summary(entities, cfg, idx)
    result["relations"] = len(relations)
    return [A.RELATIONS], result


def _forest(cfg: PipelineConfig, manifest: RunManifest) -> StageResult:
    traffic, weather = load_entities(cfg, manifest)
    relations = A.read_relations(upstream_artifact(manifest, A.RELATIONS)[0])
    resolved = resolve_parents(relations, seed=cfg.parent_pick_seed())
    forests = build_forest(resolved, traffic + weather, node_cap=cfg.tree_node_cap)
    A.write_forests(forests, manifest.path(A.FOREST))
    return [A.FOREST], forest_summary(forests)


def mine_partition(forest: Forest, cfg: PipelineConfig) -> Tuple[List[FrequentPattern], List[Dict[str, str]]]:
    """Frequent patterns of one city forest plus their report rows."""
    patterns = mine(forest, cfg)
    rows = []
    for fp in patterns:
        peak = pattern_occurrence_metadata(forest, fp.pattern, cfg.tz_offset(forest.state),
                                           cfg.peak_mass_fraction, fp.tree_indices)
        flags = list(fp.flags) + ["heuristic_peak"]
        if peak.flat:
            flags.append("flat")
        if cfg.road_type_annotation:
            flags.append(f"road={road_type(pattern_streets(forest, fp.tree_indices))}")
        rows.append({
            "state": forest.state, "city": forest.city, "encoding": fp.encoding,
            "node_count": str(fp.pattern.node_count), "tree_count": str(fp.tree_count),
            "support": format_float(fp.support), "peak_hours": peak.label(), "flags": ";".join(flags),
        })
    return patterns, rows


def _mine_job(args: Tuple[Forest, PipelineConfig]):
    return mine_partition(*args)


def _mine(cfg: PipelineConfig, manifest: RunManifest) -> StageResult:
    forests = A.read_forests(upstream_artifact(manifest, A.FOREST)[0])
    jobs = [(f, cfg) for f in forests if f.trees]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            mined = list(pool.map(_mine_job, jobs))
    else:
        mined = [_mine_job(j) for j in jobs]

    rows: List[Dict[str, str]] = []
    city_results = []
    for (forest, _), (patterns, pattern_rows) in zip(jobs, mined):
        rows.extend(pattern_rows)
        city_results.append((forest.partition_key, patterns))
    A.write_records(rows, A.PATTERN_COLUMNS, manifest.path(A.PATTERNS))

    per_state = core_state_patterns(city_results)
    save_json({
        state: {p.encoding: {"cities": info.cities, "mean_support": float(format_float(info.mean_support))}
                for p, info in infos.items()}
        for state, infos in per_state.items()
    }, manifest.path(A.STATE_PATTERNS))
    summary = pattern_root_summary(fp.pattern for _, patterns in city_results for fp in patterns)
    summary["partitions"] = len(city_results)
    summary["rows"] = len(rows)
    return [A.PATTERNS, A.STATE_PATTERNS], summary


def _regions(cfg: PipelineConfig, manifest: RunManifest) -> StageResult:
    data = parse_json_file(upstream_artifact(manifest, A.STATE_PATTERNS)[0])
    per_state = {state: [TreePattern.from_encoding(e) for e in encodings] for state, encodings in data.items()}
    if not any(per_state.values()):
        raise DataError("No propagation patterns found in any state; nothing to cluster")
    vectors = build_state_vectors(per_state)
    report = cluster_states(vectors, k_range=(cfg.k_min, cfg.k_max), seed=cfg.rng_seed,
                            restarts=cfg.kmeans_restarts, distinguishing_fraction=cfg.distinguishing_fraction)
    payload = report.to_dict()
    payload["assignment"] = dict(sorted(report.assignment.items()))
    save_json(A.json_safe(payload), manifest.path(A.CLUSTERS))
    return [A.CLUSTERS], {"k": report.k, "states": len(vectors), "degenerate": report.degenerate}


def estimate_radius(cfg: PipelineConfig, traffic: List[GeoEntity]) -> RadiusEstimate:
    """Seeded S1 / S2 samples of the traffic entities, then the DBSCAN-based radius estimate."""
    s1 = sample_entities(traffic, cfg.radius_sample_s1, cfg.rng_seed)
    s2 = sample_entities(s1, cfg.radius_sample_s2, cfg.rng_seed + 1)
    return estimate_vicinity_radius(s1, s2, q=cfg.radius_percentile)


def _radius_payload(estimate: Optional[RadiusEstimate], radius: float, rho: float) -> Dict[str, Any]:
    return A.json_safe({
        "estimated": estimate is not None,
        "eps_m": estimate.eps if estimate else None,
        "min_pts": estimate.min_pts if estimate else None,
        "num_clusters": estimate.num_clusters if estimate else None,
        "radius_m": radius,
        "merge_rho_m": rho,
    })


def _longterm(cfg: PipelineConfig, manifest: RunManifest) -> StageResult:
    traffic, weather = load_entities(cfg, manifest)
    idx = load_station_index(manifest)
    entities = traffic + weather
    threshold = long_duration_threshold(entities, cfg.long_duration_percentile)
    longs = extract_long_entities(entities, threshold, idx)

    estimate = None
    radius = cfg.vicinity_radius_R
    if radius is None:
        estimate = estimate_radius(cfg, traffic)
        radius = estimate.radius
    rho = cfg.merge_rho if cfg.merge_rho is not None else radius
    merged = merge_overlaps(longs, rho, idx)
    counts = compute_all_vicinity_counts(merged, traffic, radius, cfg.before_after_gap_W, idx, jobs=cfg.jobs)

    results, skipped = [], []
    for kind in BucketKind:
        buckets = bucketize(merged, kind, cfg.duration_edges_hours)
        kind_results, kind_skipped = run_all_tests(buckets, counts, cfg.significance_levels, cfg.pooled_t_test)
        results.extend(kind_results)
        skipped.extend(kind_skipped)
    impacts = {(r.bucket_kind, r.bucket_key): r.impact for r in impact_summary(results, cfg.impact_level)}

    A.write_long_entities(merged, manifest.path(A.LONG_ENTITIES))
    save_json(_radius_payload(estimate, radius, rho), manifest.path(A.RADIUS))
    A.write_records([
        {"long_id": c.long_id, "s_r": str(c.s_r), "s_before": str(c.s_before), "s_after": str(c.s_after)}
        for _, c in sorted(counts.items())
    ], A.VICINITY_COLUMNS, manifest.path(A.VICINITY))
    A.write_records([
        {
            "bucket_kind": r.bucket_kind.value, "bucket_key": r.bucket_key, "test": r.test.value, "n": str(r.n),
            "t_stat": format_float(r.t_stat), "df": format_float(r.df), "p_value": format_float(r.p_value),
            **{A.significance_column(level): str(int(level in r.significant_at)) for level in cfg.significance_levels},
            "impact": impacts[(r.bucket_kind, r.bucket_key)],
        }
        for r in results
    ], A.result_columns(cfg.significance_levels), manifest.path(A.TESTS))
    return [A.LONG_ENTITIES, A.RADIUS, A.VICINITY, A.TESTS], {
        "threshold_s": threshold, "threshold_min": threshold / 60.0,
        "long_entities": len(longs), "merged_long_entities": len(merged),
        "radius_m": radius, "buckets_tested": len(results) // 6,
        "buckets_skipped": [f"{s.bucket_kind}:{s.bucket_key}" for s in skipped],
        "type_frequency_before": [list(row) for row in type_frequency(longs, top=10)],
        "type_frequency_after": [list(row) for row in type_frequency(merged, top=10)],
    }


def _report(cfg: PipelineConfig, manifest: RunManifest) -> StageResult:
    from .reports import REPORT_FORMATS, REPORT_KINDS, emit_report

    outputs = [emit_report(kind, fmt, manifest) for kind in REPORT_KINDS for fmt in REPORT_FORMATS]
    return outputs, {"reports": len(outputs)}


STAGE_BODIES: Dict[str, Callable[[PipelineConfig, RunManifest], StageResult]] = {
    "ingest": _ingest, "relations": _relations, "forest": _forest, "mine": _mine,
    "regions": _regions, "longterm": _longterm, "report": _report,
}

# ---------------------------------------------------------------- standalone steps (not cached)

def extract_long_step(cfg: PipelineConfig, manifest: RunManifest) -> Dict[str, Any]:
    """Long-entity candidates before merging, written to long_candidates.csv."""
    traffic, weather = load_entities(cfg, manifest)
    idx = load_station_index(manifest)
    threshold = long_duration_threshold(traffic + weather, cfg.long_duration_percentile)
    longs = extract_long_entities(traffic + weather, threshold, idx)
    path = A.write_long_entities(longs, manifest.path("long_candidates.csv"))
    return {"threshold_min": threshold / 60.0, "long_entities": len(longs), "path": path,
            "type_frequency": type_frequency(longs, top=10)}


def estimate_radius_step(cfg: PipelineConfig, manifest: RunManifest) -> Dict[str, Any]:
    traffic, _ = load_entities(cfg, manifest)
    estimate = estimate_radius(cfg, traffic)
    rho = cfg.merge_rho if cfg.merge_rho is not None else estimate.radius
    path = save_json(_radius_payload(estimate, estimate.radius, rho), manifest.path("radius_estimate.json"))
    return {"eps_m": estimate.eps, "min_pts": estimate.min_pts, "radius_m": estimate.radius, "path": path}


def derive_thresholds_step(cfg: PipelineConfig, out_dir: str) -> Dict[str, Any]:
    if not cfg.observations_path:
        raise ConfigError("observations_path is required for derive-thresholds")
    observations = _parse_file(cfg.observations_path, parse_observations)
    thresholds = derive_thresholds(observations.items, seed=cfg.rng_seed)
    path = save_json(A.json_safe(thresholds.to_dict()), os.path.join(out_dir, A.THRESHOLDS))
    return {"thresholds": thresholds.to_dict(), "rejects": len(observations.rejects), "path": path}

