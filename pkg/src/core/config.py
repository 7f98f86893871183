# /src/core/config.py
import hashlib
import logging
import math
from typing import Any, Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .models import CONTIGUOUS_US_STATES

logger = logging.getLogger(__name__)

# Standard-time UTC offsets (hours) used for local peak-hour analysis.
DEFAULT_TZ_OFFSETS: Dict[str, float] = {
    **{s: -5.0 for s in ("CT", "DC", "DE", "FL", "GA", "IN", "MA", "MD", "ME", "MI", "NC", "NH",
                         "NJ", "NY", "OH", "PA", "RI", "SC", "VA", "VT", "WV", "KY")},
    **{s: -6.0 for s in ("AL", "AR", "IA", "IL", "KS", "LA", "MN", "MO", "MS", "ND", "NE",
                         "OK", "SD", "TN", "TX", "WI")},
    **{s: -7.0 for s in ("AZ", "CO", "ID", "MT", "NM", "UT", "WY")},
    **{s: -8.0 for s in ("CA", "NV", "OR", "WA")},
}

DEFAULT_DURATION_EDGES: Tuple[float, ...] = (5, 10, 15, 20, 25, 30, 35, 40, 45, math.inf)

# Fields that change how a run is executed but never what it computes.
_EXECUTION_ONLY_FIELDS = {"out_dir", "jobs", "log_level"}


def _split_items(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


class PipelineConfig(BaseModel):
    """Effective configuration of a run. Every field maps to one `--<field-name>` flag."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    # weak dependency thresholds
    d_thresh: float = Field(300.0, description="Distance threshold for traffic collocation, meters.")
    t_thresh: int = Field(600, description="Start-time difference threshold, seconds.")
    t_thresh_overrides: Dict[str, int] = Field(default_factory=lambda: {"Snow": 2400},
                                               description="Per-label T-thresh overrides, seconds.")

    # adaptive minimum support
    min_sup_a: float = 0.004
    min_sup_b: float = 1.5
    min_sup_c: float = 0.05
    min_sup_floor: float = 0.05
    fixed_min_sup: Optional[float] = Field(None, description="Explicit min_sup replacing the adaptive formula.")
    max_pattern_nodes: int = 8
    tree_node_cap: int = 10000
    parent_pick: str = Field("deterministic", description="'deterministic' or 'random:<seed>'.")
    peak_mass_fraction: float = 0.25
    road_type_annotation: bool = False

    # region profiling
    k_min: int = 2
    k_max: int = 10
    kmeans_restarts: int = 16
    distinguishing_fraction: float = 0.8

    # long-term discovery
    long_duration_percentile: float = 0.99
    vicinity_radius_R: Optional[float] = Field(None, description="Vicinity radius, meters; estimated when unset.")
    merge_rho: Optional[float] = Field(None, description="Merge distance, meters; defaults to R.")
    before_after_gap_W: int = Field(7, description="Gap W in days between a long entity and its before/after windows.")
    significance_levels: Tuple[float, ...] = (0.90, 0.95, 0.99)
    impact_level: float = 0.95
    pooled_t_test: bool = False
    duration_edges_hours: Tuple[float, ...] = DEFAULT_DURATION_EDGES
    radius_sample_s1: int = 2_000_000
    radius_sample_s2: int = 500_000
    radius_percentile: float = Field(0.99, description="Percentile q for the DBSCAN eps and min_pts estimates.")

    # ingestion
    weather_max_gap: int = 21600
    derive_weather_thresholds: bool = False
    allowed_states: Tuple[str, ...] = CONTIGUOUS_US_STATES
    tz_offsets: Dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_TZ_OFFSETS))

    # run plumbing
    traffic_path: Optional[str] = None
    weather_path: Optional[str] = None
    observations_path: Optional[str] = None
    stations_path: Optional[str] = None
    out_dir: str = "output"
    rng_seed: int = 0
    jobs: int = 1
    log_level: str = "INFO"

    @field_validator("t_thresh_overrides", "tz_offsets", mode="before")
    @classmethod
    def _parse_mapping(cls, value: Any) -> Any:
        # "Snow:2400,Fog:900"
        if isinstance(value, str):
            mapping = {}
            for item in _split_items(value):
                if ":" not in item:
                    raise ValueError(f"expected 'key:value' items, got '{item}'")
                key, raw = item.split(":", 1)
                mapping[key.strip()] = raw.strip()
            return mapping
        return value

    @field_validator("significance_levels", "duration_edges_hours", "allowed_states", mode="before")
    @classmethod
    def _parse_sequence(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(_split_items(value))
        return value

    @field_validator("fixed_min_sup", "vicinity_radius_R", "merge_rho",
                     "traffic_path", "weather_path", "observations_path", "stations_path", mode="before")
    @classmethod
    def _parse_optional(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
            return None
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> "PipelineConfig":
        positives = {
            "d_thresh": self.d_thresh, "t_thresh": self.t_thresh,
            "before_after_gap_W": self.before_after_gap_W, "weather_max_gap": self.weather_max_gap,
        }
        if self.vicinity_radius_R is not None:
            positives["vicinity_radius_R"] = self.vicinity_radius_R
        if self.merge_rho is not None:
            positives["merge_rho"] = self.merge_rho
        for label, seconds in self.t_thresh_overrides.items():
            positives[f"t_thresh_overrides[{label}]"] = seconds
        for name, value in positives.items():
            if value <= 0:
                raise ValueError(f"{name} must be > 0 (got {value})")
        if not 0.0 < self.long_duration_percentile < 1.0:
            raise ValueError("long_duration_percentile must be in (0, 1)")
        if not 0.0 < self.radius_percentile < 1.0:
            raise ValueError("radius_percentile must be in (0, 1)")
        if not 0.0 < self.min_sup_c < 1.0:
            raise ValueError("min_sup_c must be in (0, 1)")
        if self.fixed_min_sup is not None and not 0.0 < self.fixed_min_sup <= 1.0:
            raise ValueError("fixed_min_sup must be in (0, 1]")
        if any(not 0.0 < level < 1.0 for level in self.significance_levels):
            raise ValueError("significance_levels must lie in (0, 1)")
        if not 0.0 < self.impact_level < 1.0:
            raise ValueError("impact_level must be in (0, 1)")
        if list(self.duration_edges_hours) != sorted(self.duration_edges_hours) or not self.duration_edges_hours:
            raise ValueError("duration_edges_hours must be non-empty and ascending")
        if not 2 <= self.k_min <= self.k_max:
            raise ValueError("k range must satisfy 2 <= k_min <= k_max")
        if self.max_pattern_nodes < 1 or self.tree_node_cap < 1 or self.jobs < 1 or self.kmeans_restarts < 1:
            raise ValueError("max_pattern_nodes, tree_node_cap, jobs and kmeans_restarts must be >= 1")
        if self.radius_sample_s1 < self.radius_sample_s2:
            raise ValueError("radius_sample_s1 must be >= radius_sample_s2")
        self.parent_pick_seed()  # raises on malformed values
        return self

    def threshold_for(self, label: str) -> int:
        return self.t_thresh_overrides.get(label, self.t_thresh)

    def effective_t_thresh(self, label_a: str, label_b: str) -> int:
        return max(self.threshold_for(label_a), self.threshold_for(label_b))

    @property
    def max_t_thresh(self) -> int:
        return max([self.t_thresh, *self.t_thresh_overrides.values()])

    def parent_pick_seed(self) -> Optional[int]:
        """None for the deterministic rule, the RNG seed for 'random:<seed>'."""
        if self.parent_pick == "deterministic":
            return None
        if self.parent_pick.startswith("random:"):
            try:
                return int(self.parent_pick.split(":", 1)[1])
            except ValueError:
                pass
        raise ValueError(f"parent_pick must be 'deterministic' or 'random:<seed>' (got '{self.parent_pick}')")

    def tz_offset(self, state: str) -> float:
        return self.tz_offsets.get(state, 0.0)


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, dict):
        return ",".join(f"{k}:{_format_value(v)}" for k, v in sorted(value.items()))
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return str(value)


def dump_config(cfg: PipelineConfig) -> str:
    """Effective config as sorted key=value lines (the config-file format)."""
    data = cfg.model_dump()
    return "\n".join(f"{key}={_format_value(data[key])}" for key in sorted(data)) + "\n"


def config_digest(cfg: PipelineConfig) -> str:
    """Digest of the result-affecting configuration."""
    data = cfg.model_dump()
    lines = [f"{k}={_format_value(data[k])}" for k in sorted(data) if k not in _EXECUTION_ONLY_FIELDS]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """
    Builds the effective configuration: config file values first, flag overrides win.

    Args:
        path: Optional flat key=value config file (dotenv syntax).
        overrides: Field name → value, typically from command-line flags.

    Raises:
        ConfigError: unknown keys, unreadable file or invalid values.
    """
    values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                file_values = dotenv_values(stream=f)
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        field_names = {name.lower(): name for name in PipelineConfig.model_fields}
        unknown = sorted(k for k in file_values if k.lower() not in field_names)
        if unknown:
            raise ConfigError(f"Unknown config keys in {path}: {', '.join(unknown)}")
        values.update({field_names[k.lower()]: v for k, v in file_values.items() if v is not None})
        logger.info(f"Loaded {len(values)} config values from {path}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in PipelineConfig.model_fields:
            raise ConfigError(f"Unknown config key: {key}")
        values[key] = value
    try:
        return PipelineConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
