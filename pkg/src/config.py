"""
Global configurations for the Well Production Capacity estimation project.
Includes paths, geometry and diagnostic constants, synthetic-data settings
and the typed configuration objects shared by the pipeline stages.
"""
import math
import os
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple

# Project Root
BASE_DIR = Path(__file__).resolve().parent.parent

# Output Path
OUTPUTS_PATH = BASE_DIR / "outputs"

# Environment variable holding the default output directory
OUTPUT_DIR_ENV = "WELLCAP_OUTPUT_DIR"

# Geometry
# Mean spherical earth radius
EARTH_RADIUS_MILES = 3958.8

# Diagnostics gate
RHAT_THRESHOLD = 1.1
DIVERGENCE_THRESHOLD = 1000.0

# Synthetic covariates: log-normal (median, log-sd) per variable
LATERAL_MEDIAN_FT = 10_000.0
LATERAL_LOG_SD = 0.3
WATER_MEDIAN_GAL = 8.0e6
WATER_LOG_SD = 0.5
SAND_MEDIAN_LB = 9.0e6
SAND_LOG_SD = 0.5

# Synthetic outcome scale. Linear kinds: barrels per model unit above the floor.
# Logged kind: oil = exp(LOG_OIL_CENTER + LOG_OIL_SCALE * y).
OIL_SCALE_BBL = 150.0
OIL_FLOOR_BBL = 5.0
LOG_OIL_CENTER = math.log(300.0)
LOG_OIL_SCALE = 0.6

# First synthetic period
SYNTHETIC_START_YEAR = 2015


class ModelKind(str, Enum):
    """The three model families: spatial, spatio-temporal and water/sand expanded."""
    A = "A"
    B = "B"
    C = "C"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, ModelKind):
            return value
        aliases = {"spatial": "A", "spatiotemporal": "B", "spatio-temporal": "B", "expanded": "C"}
        text = str(value).strip()
        text = aliases.get(text.lower(), text.upper())
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"Unknown model kind {value!r}; expected A, B or C") from None

    @property
    def uses_time(self) -> bool:
        return self is not ModelKind.A


class TimeGranularity(str, Enum):
    YEAR = "year"
    YEAR_MONTH = "year_month"

    @property
    def pandas_freq(self) -> str:
        return "Y" if self is TimeGranularity.YEAR else "M"


class ImputationGrouping(str, Enum):
    PREFIX4 = "prefix4"
    FULL6 = "full6"


@dataclass(frozen=True)
class PipelinePolicy:
    """
    Preprocessing switches.

    `first_period`/`last_period` (labels such as "2015" or "2015-03") widen the
    time axis so periods without wells still appear as empty table columns.
    """
    time_granularity: TimeGranularity = TimeGranularity.YEAR
    scale_k: int = 2
    log_transform: bool = False
    impute_zeros: bool = False
    imputation_grouping: ImputationGrouping = ImputationGrouping.PREFIX4
    first_period: Optional[str] = None
    last_period: Optional[str] = None

    def __post_init__(self):
        if self.scale_k not in (1, 2):
            raise ValueError(f"scale_k must be 1 or 2, got {self.scale_k}")
        object.__setattr__(self, "time_granularity", TimeGranularity(self.time_granularity))
        object.__setattr__(self, "imputation_grouping", ImputationGrouping(self.imputation_grouping))

    @classmethod
    def for_kind(cls, kind, **overrides) -> "PipelinePolicy":
        kind = ModelKind.parse(kind)
        if kind is ModelKind.A:
            base = cls(scale_k=1, log_transform=False, impute_zeros=False)
        elif kind is ModelKind.B:
            base = cls(scale_k=2, log_transform=False, impute_zeros=False)
        else:
            base = cls(scale_k=2, log_transform=True, impute_zeros=True,
                       imputation_grouping=ImputationGrouping.PREFIX4)
        return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class PriorConfig:
    """
    Standard deviations of the location, random-walk and half-normal scale
    priors. sigma_y may instead get a normal prior truncated at zero, centered
    on `sigma_y_loc` with sd `sigma_y_scale` (defaults: 0 and scale_sigma, the
    half-normal).
    """
    scale_loc: float = 0.5
    scale_walk: float = 0.5
    scale_sigma: float = 0.5
    sigma_y_loc: float = 0.0
    sigma_y_scale: Optional[float] = None

    def __post_init__(self):
        for name in ("scale_loc", "scale_walk", "scale_sigma"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a positive finite number, got {value}")
        if not (self.sigma_y_loc >= 0 and math.isfinite(self.sigma_y_loc)):
            raise ValueError(f"sigma_y_loc must be a non-negative finite number, got {self.sigma_y_loc}")
        if self.sigma_y_scale is not None and not (self.sigma_y_scale > 0 and math.isfinite(self.sigma_y_scale)):
            raise ValueError(f"sigma_y_scale must be a positive finite number, got {self.sigma_y_scale}")

    @property
    def sigma_y_sd(self) -> float:
        return self.scale_sigma if self.sigma_y_scale is None else self.sigma_y_scale

    @classmethod
    def for_kind(cls, kind, **overrides) -> "PriorConfig":
        kind = ModelKind.parse(kind)
        if kind is ModelKind.A:
            base = cls(scale_loc=1.0, scale_walk=0.5, scale_sigma=1.0)
        else:
            base = cls()
        return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class SamplerConfig:
    """NUTS settings. Defaults: three chains of 500 warm-up and 2,500 kept iterations."""
    chains: int = 3
    warmup: int = 500
    draws: int = 2500
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 20240612
    step_size_init: float = 1.0
    adapt_step_size: bool = True
    adapt_mass: bool = True
    init_radius: float = 2.0
    max_init_attempts: int = 100
    divergence_threshold: float = DIVERGENCE_THRESHOLD
    cores: Optional[int] = None
    progress: bool = False

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")
        if self.step_size_init <= 0:
            raise ValueError("step_size_init must be > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")


def default_output_dir() -> Path:
    """Output directory from the environment, falling back to ./outputs."""
    return Path(os.environ.get(OUTPUT_DIR_ENV, str(OUTPUTS_PATH)))


@dataclass
class RunConfig:
    """Everything a command needs. Built from a key=value file plus CLI overrides."""
    output_dir: Path
    kind: ModelKind = ModelKind.B
    input_path: Optional[Path] = None
    policy: PipelinePolicy = field(default_factory=PipelinePolicy)
    priors: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    clamp_negative: bool = False
    aggregations: Tuple[Tuple[str, ...], ...] = ()
    aggregation_weights: str = "equal"
    histogram_bins: int = 30
    strict: bool = True

    def validate(self) -> "RunConfig":
        if self.kind is ModelKind.C and not self.policy.log_transform:
            raise ValueError("Model kind C requires log_transform=true")
        if self.kind is ModelKind.C and not self.policy.impute_zeros:
            raise ValueError("Model kind C requires impute_zeros=true")
        if self.aggregation_weights not in ("equal", "counts"):
            raise ValueError("aggregation_weights must be 'equal' or 'counts'")
        if self.histogram_bins < 1:
            raise ValueError("histogram_bins must be >= 1")
        return self

    def to_dict(self) -> Dict:
        """Plain-JSON echo of every field for run manifests."""
        return {
            "output_dir": str(self.output_dir),
            "kind": self.kind.value,
            "input_path": str(self.input_path) if self.input_path else None,
            "policy": _enum_values(asdict(self.policy)),
            "priors": asdict(self.priors),
            "sampler": asdict(self.sampler),
            "clamp_negative": self.clamp_negative,
            "aggregations": [list(group) for group in self.aggregations],
            "aggregation_weights": self.aggregation_weights,
            "histogram_bins": self.histogram_bins,
            "strict": self.strict,
        }


def _enum_values(values: Dict) -> Dict:
    return {k: (v.value if isinstance(v, Enum) else v) for k, v in values.items()}


# --- key=value configuration files ---

_POLICY_KEYS = {"time_granularity", "scale_k", "log_transform", "impute_zeros",
                "imputation_grouping", "first_period", "last_period"}
_PRIOR_KEYS = {"scale_loc", "scale_walk", "scale_sigma", "sigma_y_loc", "sigma_y_scale"}
_SAMPLER_KEYS = {"chains", "warmup", "draws", "target_accept", "max_tree_depth", "seed",
                 "step_size_init", "cores"}
_RUN_KEYS = {"input", "output_dir", "kind", "clamp_negative", "aggregate",
             "aggregation_weights", "histogram_bins", "strict"}
KNOWN_KEYS = _POLICY_KEYS | _PRIOR_KEYS | _SAMPLER_KEYS | _RUN_KEYS


def read_config_file(path: Path) -> Dict[str, str]:
    """
    Reads a plain-text key=value file. Blank lines and '#' comments are ignored.

    Args:
        path (Path): Config file.

    Returns:
        Dict[str, str]: Raw string values keyed by option name.
    """
    values: Dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{number}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in KNOWN_KEYS:
                raise ValueError(f"{path}:{number}: unknown option {key!r}")
            values[key] = value
    return values


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"Not a boolean: {value!r}")


def parse_aggregations(value: str) -> Tuple[Tuple[str, ...], ...]:
    """'DN87au+DN87cm;DN87cq+DN87cw' -> (('DN87au', 'DN87cm'), ('DN87cq', 'DN87cw'))"""
    groups = []
    for chunk in str(value).split(";"):
        blocks = tuple(code.strip() for code in chunk.split("+") if code.strip())
        if blocks:
            groups.append(blocks)
    return tuple(groups)


def build_run_config(values: Dict[str, str]) -> RunConfig:
    """
    Builds a validated RunConfig from string options. Per-kind defaults for the
    pipeline policy and priors are applied first, explicit options override them.
    """
    kind = ModelKind.parse(values.get("kind", "B"))

    converters = {
        "scale_k": int, "log_transform": parse_bool, "impute_zeros": parse_bool,
        "scale_loc": float, "scale_walk": float, "scale_sigma": float,
        "sigma_y_loc": float, "sigma_y_scale": float,
        "chains": int, "warmup": int, "draws": int, "target_accept": float,
        "max_tree_depth": int, "seed": int, "step_size_init": float, "cores": int,
    }

    def pick(keys):
        return {k: converters.get(k, str)(v) for k, v in values.items() if k in keys and v is not None}

    policy = PipelinePolicy.for_kind(kind, **pick(_POLICY_KEYS))
    priors = PriorConfig.for_kind(kind, **pick(_PRIOR_KEYS))
    sampler = SamplerConfig(**pick(_SAMPLER_KEYS))

    output_dir = Path(values["output_dir"]) if values.get("output_dir") else default_output_dir()
    config = RunConfig(
        output_dir=output_dir,
        kind=kind,
        input_path=Path(values["input"]) if values.get("input") else None,
        policy=policy,
        priors=priors,
        sampler=sampler,
        clamp_negative=parse_bool(values.get("clamp_negative", False)),
        aggregations=parse_aggregations(values.get("aggregate", "")),
        aggregation_weights=values.get("aggregation_weights", "equal"),
        histogram_bins=int(values.get("histogram_bins", 30)),
        strict=parse_bool(values.get("strict", True)),
    )
    return config.validate()
