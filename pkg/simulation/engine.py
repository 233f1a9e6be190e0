"""
Simulation Engine.
Generates synthetic wells from known model parameters so a fit can be compared
against the truth that private production data never provides.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from src.config import (
    LATERAL_LOG_SD, LATERAL_MEDIAN_FT, LOG_OIL_CENTER, LOG_OIL_SCALE, OIL_FLOOR_BBL,
    OIL_SCALE_BBL, SAND_LOG_SD, SAND_MEDIAN_LB, SYNTHETIC_START_YEAR, WATER_LOG_SD,
    WATER_MEDIAN_GAL, ModelKind, PipelinePolicy, PriorConfig, TimeGranularity,
)
from src.data_loader import write_json, write_wells
from src.grid import SUBSQUARE_LAT_DEG, SUBSQUARE_LON_DEG, block_center, encode_locator
from src.models import ParamLayout, SmallAreaModel
from src.preprocessor import (
    PreparedDataset, build_design, canonical_order, impute_zeros, log_transform, period_labels,
)

logger = logging.getLogger(__name__)

# Squares the synthetic blocks are drawn from (western North Dakota)
SYNTHETIC_SQUARES = ("DN86", "DN87", "DN88", "DN96", "DN97", "DN98")

# Wells are placed within this fraction of a half cell around the block center
_JITTER = 0.4


def synthetic_blocks(n_blocks: int, rng: np.random.Generator) -> List[str]:
    letters = "abcdefghijklmnopqrstuvwx"
    pool = [sq + a + b for sq in SYNTHETIC_SQUARES for a in letters for b in letters]
    if n_blocks > len(pool):
        raise ValueError(f"At most {len(pool)} synthetic blocks, asked for {n_blocks}")
    return sorted(rng.choice(pool, size=n_blocks, replace=False).tolist())


def allocate_cells(n_blocks: int, n_times: int, n_wells: int, rng: np.random.Generator,
                   concentration: float = 0.5) -> np.ndarray:
    """
    Wells per (block, period). Every block and every period gets at least one
    well; the rest follow gamma-distributed cell weights, so low
    `concentration` leaves many cells with one or two wells.
    """
    if n_wells < n_blocks + n_times:
        raise ValueError(f"n_wells must be >= n_blocks + n_times ({n_blocks + n_times})")
    counts = np.zeros((n_blocks, n_times), dtype=np.int64)
    counts[np.arange(n_blocks), rng.integers(n_times, size=n_blocks)] += 1
    for t in np.flatnonzero(counts.sum(axis=0) == 0):
        counts[rng.integers(n_blocks), t] += 1
    weights = rng.gamma(concentration, size=n_blocks * n_times)
    counts += rng.multinomial(n_wells - counts.sum(), weights / weights.sum()).reshape(n_blocks, n_times)
    return counts


def _random_walk(rng: np.random.Generator, scale: float, size: int) -> np.ndarray:
    return np.cumsum(rng.normal(0.0, scale, size))


def _draw_sigma_y(rng: np.random.Generator, priors: PriorConfig) -> np.float64:
    """Draw from the sigma_y prior: half-normal, or a normal truncated at zero."""
    if priors.sigma_y_loc == 0:
        return np.float64(abs(rng.normal(0.0, priors.sigma_y_sd)))
    while True:
        value = rng.normal(priors.sigma_y_loc, priors.sigma_y_sd)
        if value > 0:
            return np.float64(value)


@dataclass
class SyntheticTruth:
    """
    Generating parameters (natural scale, sigmas as sigmas) and the affine map
    from the generation scale to barrels: g(oil) = oil_offset + oil_scale * y,
    with g = log for the logged kind.
    """
    kind: ModelKind
    seed: int
    n_blocks: int
    n_times: int
    n_wells: int
    params: Dict[str, np.ndarray]
    oil_offset: float
    oil_scale: float
    log_outcome: bool
    block_codes: List[str] = field(default_factory=list)
    time_labels: List[str] = field(default_factory=list)

    def theta(self) -> np.ndarray:
        """Generation-scale parameter vector in the model's flat layout."""
        layout = ParamLayout(self.kind, self.n_blocks, self.n_times)
        values = {name: value for name, value in self.params.items() if not name.startswith("sigma_")}
        values["log_sigma_y"] = np.log(self.params["sigma_y"])
        if self.kind is ModelKind.A:
            values["log_sigma_beta"] = np.log(self.params["sigma_beta"])
        return layout.pack(values)

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind.value,
            "seed": self.seed,
            "n_blocks": self.n_blocks,
            "n_times": self.n_times,
            "n_wells": self.n_wells,
            "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
            "oil_offset": self.oil_offset,
            "oil_scale": self.oil_scale,
            "log_outcome": self.log_outcome,
            "block_codes": self.block_codes,
            "time_labels": self.time_labels,
        }

    @classmethod
    def from_dict(cls, payload: Dict) -> "SyntheticTruth":
        data = dict(payload)
        data["kind"] = ModelKind.parse(data["kind"])
        data["params"] = {k: np.asarray(v, dtype=float) for k, v in data["params"].items()}
        return cls(**data)


def fitted_truth(truth: SyntheticTruth, data: PreparedDataset,
                 priors: Optional[PriorConfig] = None) -> Dict[str, np.ndarray]:
    """
    Truth expressed on the scale the model is fitted on (the standardized
    outcome of `data`).

    For the kinds with both alpha and tau only alpha_b + tau_t is identified;
    the common shift is placed where the alpha and first tau prior terms are
    jointly most probable, which is where the posterior centers that direction.
    """
    std = data.standardizers["y"]
    shift = (std.mean - truth.oil_offset) / truth.oil_scale
    scale = std.k * std.sd / truth.oil_scale
    p = {k: np.asarray(v, dtype=float) for k, v in truth.params.items()}

    out = {"alpha": (p["alpha"] - shift) / scale, "sigma_y": p["sigma_y"] / scale}
    slope_names = {
        ModelKind.A: ("beta", "gamma", "delta", "sigma_beta"),
        ModelKind.B: ("delta", "gamma_t"),
        ModelKind.C: ("gamma", "delta", "phi", "omega"),
    }[truth.kind]
    for name in slope_names:
        out[name] = p[name] / scale

    if truth.kind.uses_time:
        priors = priors or PriorConfig.for_kind(truth.kind)
        tau = p["tau"] / scale
        loc_prec = 1.0 / priors.scale_loc ** 2
        walk_prec = 1.0 / priors.scale_walk ** 2
        c = (tau[0] * walk_prec - out["alpha"].sum() * loc_prec) / (len(out["alpha"]) * loc_prec + walk_prec)
        out["alpha"] = out["alpha"] + c
        out["tau"] = tau - c
    return out


@dataclass
class SimulationResult:
    wells: pd.DataFrame
    coordinates: pd.DataFrame
    truth: SyntheticTruth
    design: PreparedDataset
    mean: np.ndarray
    outcome: np.ndarray

    @property
    def expected_oil(self) -> np.ndarray:
        """Noise-free oil per well in barrels (the median for the logged kind)."""
        value = self.truth.oil_offset + self.truth.oil_scale * self.mean
        return np.exp(value) if self.truth.log_outcome else value

    def write(self, output_dir: Path) -> List[Path]:
        output_dir = Path(output_dir)
        wells_path = output_dir / "wells.csv"
        truth_path = output_dir / "truth.json"
        write_wells(self.wells, wells_path, coordinates=self.coordinates)
        write_json(self.truth.to_dict(), truth_path)
        return [wells_path, truth_path]


class SyntheticWellGenerator:
    """
    Synthetic data for one model kind at a given size. Covariates are
    log-normal, truths come from the priors unless given, and the outcome is
    drawn from the model's own likelihood.
    """

    def __init__(self, kind, n_blocks: int, n_times: int, n_wells: int, seed: int = 0,
                 priors: Optional[PriorConfig] = None, policy: Optional[PipelinePolicy] = None,
                 cell_concentration: float = 0.5):
        self.kind = ModelKind.parse(kind)
        if self.kind.uses_time and n_times < 2:
            raise ValueError(f"Kind {self.kind.value} needs n_times >= 2")
        self.n_blocks = n_blocks
        self.n_times = n_times
        self.n_wells = n_wells
        self.seed = seed
        self.priors = priors or PriorConfig.for_kind(self.kind)
        self.policy = policy or PipelinePolicy.for_kind(self.kind)
        self.cell_concentration = cell_concentration

    def _periods(self) -> pd.PeriodIndex:
        granularity = self.policy.time_granularity
        start = str(SYNTHETIC_START_YEAR) if granularity is TimeGranularity.YEAR else f"{SYNTHETIC_START_YEAR}-01"
        return pd.period_range(start=start, periods=self.n_times, freq=granularity.pandas_freq)

    def _draw_truth(self, rng: np.random.Generator, design: PreparedDataset) -> Dict[str, np.ndarray]:
        pr = self.priors
        B, T = self.n_blocks, self.n_times
        if self.kind is ModelKind.A:
            gamma = rng.normal(0.0, pr.scale_loc)
            delta = rng.normal(0.0, pr.scale_loc)
            sigma_beta = abs(rng.normal(0.0, pr.scale_sigma))
            w_bar = np.nan_to_num(design.w_bar_b, nan=0.0)
            return {
                "alpha": rng.normal(0.0, pr.scale_loc, B),
                "beta": rng.normal(gamma + delta * w_bar, sigma_beta),
                "gamma": np.float64(gamma),
                "delta": np.float64(delta),
                "sigma_beta": np.float64(sigma_beta),
                "sigma_y": _draw_sigma_y(rng, pr),
            }
        if self.kind is ModelKind.B:
            return {
                "alpha": rng.normal(0.0, pr.scale_loc, B),
                "delta": rng.normal(0.0, pr.scale_loc, B),
                "tau": _random_walk(rng, pr.scale_walk, T),
                "gamma_t": _random_walk(rng, pr.scale_walk, T),
                "sigma_y": _draw_sigma_y(rng, pr),
            }
        return {
            "alpha": rng.normal(0.0, pr.scale_loc, B),
            "gamma": rng.normal(0.0, pr.scale_loc, B),
            "delta": rng.normal(0.0, pr.scale_loc, B),
            "tau": _random_walk(rng, pr.scale_walk, T),
            "phi": _random_walk(rng, pr.scale_walk, T),
            "omega": _random_walk(rng, pr.scale_walk, T),
            "sigma_y": _draw_sigma_y(rng, pr),
        }

    def _wells_frame(self, rng: np.random.Generator) -> pd.DataFrame:
        B, T, N = self.n_blocks, self.n_times, self.n_wells
        block_codes = synthetic_blocks(B, rng)
        periods = self._periods()
        counts = allocate_cells(B, T, N, rng, self.cell_concentration)
        cells = np.repeat(np.arange(B * T), counts.ravel())
        b, t = cells // T, cells % T

        centers = np.array([block_center(code) for code in block_codes])
        lat = np.round(centers[b, 0] + rng.uniform(-_JITTER, _JITTER, N) * SUBSQUARE_LAT_DEG, 6)
        lon = np.round(centers[b, 1] + rng.uniform(-_JITTER, _JITTER, N) * SUBSQUARE_LON_DEG, 6)

        starts = np.array([p.start_time for p in periods])
        lengths = np.array([(p.end_time.normalize() - p.start_time).days + 1 for p in periods])
        offsets = np.floor(rng.uniform(0.0, 1.0, N) * lengths[t]).astype(int)
        dates = pd.to_datetime(starts[t]) + pd.to_timedelta(offsets, unit="D")

        frame = pd.DataFrame({
            "well_id": [f"SYN-{i:06d}" for i in range(1, N + 1)],
            "date": dates,
            "locator": [encode_locator(la, lo) for la, lo in zip(lat, lon)],
            "water": np.round(rng.lognormal(np.log(WATER_MEDIAN_GAL), WATER_LOG_SD, N)),
            "sand": np.round(rng.lognormal(np.log(SAND_MEDIAN_LB), SAND_LOG_SD, N)),
            "lateral": np.round(rng.lognormal(np.log(LATERAL_MEDIAN_FT), LATERAL_LOG_SD, N), 1),
            "well_type": "horizontal",
            "lat": lat,
            "lon": lon,
        })
        frame["period"] = period_labels(frame["date"], self.policy.time_granularity)
        return canonical_order(frame).drop(columns=["period"])

    def generate(self, truth_params: Optional[Dict[str, float]] = None) -> SimulationResult:
        """
        Args:
            truth_params: Values replacing the prior draws (e.g. {"sigma_y": 0.5}).
        """
        rng = np.random.default_rng(self.seed)
        frame = self._wells_frame(rng)
        coordinates = frame[["lat", "lon"]].reset_index(drop=True)
        wells = frame.drop(columns=["lat", "lon"])

        working = wells
        if self.policy.impute_zeros:
            working = impute_zeros(working, self.policy.imputation_grouping)
        if self.policy.log_transform:
            working = log_transform(working)
        design = build_design(working, self.policy, self.kind, with_outcome=False)

        params = self._draw_truth(rng, design)
        for name, value in (truth_params or {}).items():
            if name not in params:
                raise KeyError(f"Unknown truth parameter {name!r} for kind {self.kind.value}")
            params[name] = np.asarray(value, dtype=float)

        model = SmallAreaModel(self.kind, design.with_outcome(np.zeros(design.n_wells)), self.priors)
        truth = SyntheticTruth(
            kind=self.kind, seed=self.seed, n_blocks=self.n_blocks, n_times=self.n_times,
            n_wells=self.n_wells, params=params, oil_offset=0.0, oil_scale=1.0,
            log_outcome=self.policy.log_transform,
            block_codes=list(design.block_codes), time_labels=list(design.time_labels),
        )
        mean = model.predict_mean(truth.theta())
        outcome = mean + float(params["sigma_y"]) * rng.standard_normal(design.n_wells)

        if truth.log_outcome:
            truth.oil_offset, truth.oil_scale = LOG_OIL_CENTER, LOG_OIL_SCALE
            oil = np.exp(truth.oil_offset + truth.oil_scale * outcome)
        else:
            truth.oil_offset = OIL_FLOOR_BBL - OIL_SCALE_BBL * float(outcome.min())
            truth.oil_scale = OIL_SCALE_BBL
            oil = truth.oil_offset + truth.oil_scale * outcome

        wells = wells.copy()
        wells["oil"] = oil
        wells = wells[["well_id", "date", "locator", "oil", "water", "sand", "lateral", "well_type"]]
        logger.info("Simulated %d wells (kind %s, %d blocks, %d periods, seed %d)",
                    self.n_wells, self.kind.value, self.n_blocks, self.n_times, self.seed)
        return SimulationResult(wells=wells.reset_index(drop=True), coordinates=coordinates,
                                truth=truth, design=design, mean=mean, outcome=outcome)
