"""
Report Module.
Posterior-mean predictions back on barrels, fit metrics, and the tables the
analysts read: per (block, period) estimates next to the raw averages,
histograms, multi-block aggregates and time trajectories.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import mean_squared_error

from src.config import ModelKind, RunConfig
from src.data_loader import write_json
from src.exceptions import DimensionError
from src.grid import block_area_sq_miles, is_valid_locator
from src.models import ParamLayout, SmallAreaModel
from src.preprocessor import PreparedDataset, group_averages
from src.sampler import PosteriorDraws

logger = logging.getLogger(__name__)

# Rows of draws pushed through the model at once
_CHUNK = 256


def rmsd(predicted, observed) -> float:
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise DimensionError(f"predicted {predicted.shape} and observed {observed.shape} differ")
    if predicted.size == 0:
        raise ValueError("rmsd needs at least one pair")
    return float(np.sqrt(mean_squared_error(observed, predicted)))


def discrepancy_interval(predicted, observed, level: float = 0.90) -> Tuple[float, float]:
    """Central interval of observed - predicted, by linear-interpolated quantiles."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    diff = np.asarray(observed, dtype=float) - np.asarray(predicted, dtype=float)
    if diff.size == 0:
        raise ValueError("discrepancy_interval needs at least one pair")
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(diff, [tail, 1.0 - tail])
    return float(low), float(high)


def _flat_draws(draws: Union[PosteriorDraws, np.ndarray], dim: int) -> np.ndarray:
    values = draws.flat() if isinstance(draws, PosteriorDraws) else np.asarray(draws, dtype=float)
    values = np.atleast_2d(values)
    if values.shape[-1] != dim:
        raise DimensionError(f"draws have {values.shape[-1]} parameters, the model needs {dim}")
    return values.reshape(-1, dim)


def posterior_mean_predictions(draws: Union[PosteriorDraws, np.ndarray], kind, data: PreparedDataset,
                               clamp_negative: bool = False) -> np.ndarray:
    """
    Per-well prediction in barrels: the posterior mean of mu on the
    standardized scale, de-standardized, and exponentiated when the outcome
    was logged. Optionally clamped at zero.
    """
    kind = ModelKind.parse(kind)
    model = SmallAreaModel(kind, data)
    if isinstance(draws, PosteriorDraws) and draws.param_names != model.param_names():
        raise DimensionError("Draw columns do not match the model's parameter layout")
    flat = _flat_draws(draws, model.dim)

    total = np.zeros(data.n_wells)
    for start in range(0, len(flat), _CHUNK):
        total += model.predict_mean(flat[start:start + _CHUNK]).sum(axis=0)
    predictions = data.outcome_original(total / len(flat))
    if clamp_negative:
        predictions = np.maximum(predictions, 0.0)
    return predictions


def histogram_data(predicted, observed, bins: int = 30) -> pd.DataFrame:
    """Predicted and observed counts over shared bin edges (no rendering)."""
    if int(bins) < 1:
        raise ValueError(f"bins must be at least 1, got {bins}")
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    predicted = predicted[np.isfinite(predicted)]
    observed = observed[np.isfinite(observed)]
    if predicted.size == 0 or observed.size == 0:
        raise ValueError("histogram_data needs two nonempty vectors")
    edges = np.histogram_bin_edges(np.concatenate([predicted, observed]), bins=int(bins))
    pred_counts, _ = np.histogram(predicted, bins=edges)
    obs_counts, _ = np.histogram(observed, bins=edges)
    return pd.DataFrame({
        "bin_left": edges[:-1],
        "bin_right": edges[1:],
        "predicted": pred_counts,
        "observed": obs_counts,
    })


# Time-indexed parameter families per model kind
TRAJECTORY_FAMILIES = {
    ModelKind.B: ("tau", "gamma_t"),
    ModelKind.C: ("tau", "phi", "omega"),
}


@dataclass
class TrajectorySeries:
    """Posterior mean and 5%/95% band of one time-indexed family, one entry per period."""
    parameter: str
    time_labels: List[str]
    mean: np.ndarray
    q5: np.ndarray
    q95: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "parameter": self.parameter,
            "period": self.time_labels,
            "mean": self.mean,
            "q5": self.q5,
            "q95": self.q95,
        })


def time_trajectories(draws: PosteriorDraws, kind,
                      time_labels: Optional[Sequence[str]] = None) -> List[TrajectorySeries]:
    """
    Summaries of tau/gamma_t (kind B) or tau/phi/omega (kind C) over time,
    pooled across chains. Periods are labelled 1..T unless `time_labels` is given.
    """
    kind = ModelKind.parse(kind)
    if kind not in TRAJECTORY_FAMILIES:
        raise ValueError("Time trajectories need a time dimension (model kinds B and C)")
    families = TRAJECTORY_FAMILIES[kind]
    n_times = sum(name.startswith("tau[") for name in draws.param_names)
    n_blocks = sum(name.startswith("alpha[") for name in draws.param_names)
    if draws.param_names != ParamLayout(kind, n_blocks, n_times).names():
        raise DimensionError(f"Draw columns do not match the kind {kind.value} layout")
    labels = [str(t) for t in range(1, n_times + 1)] if time_labels is None else list(time_labels)
    if len(labels) != n_times:
        raise DimensionError(f"{len(labels)} period labels for {n_times} periods")

    layout = ParamLayout(kind, n_blocks, n_times)
    flat = draws.flat()
    series = []
    for family in families:
        values = flat[:, layout.slices[family]]
        q5, q95 = np.quantile(values, [0.05, 0.95], axis=0)
        series.append(TrajectorySeries(family, labels, values.mean(axis=0), q5, q95))
    return series


def trajectories_frame(series: Sequence[TrajectorySeries]) -> pd.DataFrame:
    """Long format, one row per (parameter, period)."""
    return pd.concat([s.to_frame() for s in series], ignore_index=True)


@dataclass
class EstimateTable:
    """
    Values per (block, period) cell, shape (B, T). Cells without wells are NaN.
    `provenance` tells whether the values are model-based or raw averages.
    """
    block_codes: List[str]
    time_labels: List[str]
    values: np.ndarray
    counts: np.ndarray
    provenance: str = "model"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        shape = (len(self.block_codes), len(self.time_labels))
        if self.values.shape != shape or self.counts.shape != shape:
            raise DimensionError(f"table must be {shape}, got {self.values.shape}")

    def cell(self, block: str, period: str) -> float:
        return float(self.values[self.block_codes.index(block), self.time_labels.index(period)])

    def to_frame(self) -> pd.DataFrame:
        """Wide table: one row per block, one column per period."""
        frame = pd.DataFrame(self.values, index=pd.Index(self.block_codes, name="block"),
                             columns=self.time_labels)
        return frame

    def to_long(self) -> pd.DataFrame:
        b_idx, t_idx = np.meshgrid(np.arange(len(self.block_codes)), np.arange(len(self.time_labels)),
                                   indexing="ij")
        return pd.DataFrame({
            "block": np.asarray(self.block_codes, dtype=object)[b_idx.ravel()],
            "period": np.asarray(self.time_labels, dtype=object)[t_idx.ravel()],
            "value": self.values.ravel(),
            "n_wells": self.counts.ravel(),
            "provenance": self.provenance,
        })

    def to_csv(self, filepath: Path) -> None:
        Path(filepath).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(filepath, na_rep="NA", float_format="%.6f")

    @classmethod
    def from_csv(cls, filepath: Path, provenance: str = "model") -> "EstimateTable":
        """
        Reads a wide table written by `to_csv` (or typed by hand in the same
        layout). Well counts are not stored, so present cells count as one well.
        """
        frame = pd.read_csv(filepath, index_col="block", dtype={"block": str},
                            na_values=["NA"], keep_default_na=False)
        values = frame.to_numpy(dtype=float)
        return cls(
            block_codes=[str(code) for code in frame.index],
            time_labels=[str(label) for label in frame.columns],
            values=values,
            counts=(~np.isnan(values)).astype(np.int64),
            provenance=provenance,
        )


def _cell_table(values, data: PreparedDataset, provenance: str) -> EstimateTable:
    values = np.asarray(values, dtype=float)
    if values.shape != (data.n_wells,):
        raise DimensionError(f"need one value per well ({data.n_wells}), got {values.shape}")
    cells = data.block_of * data.n_times + data.time_of
    means = group_averages(values, cells, data.n_blocks * data.n_times)
    return EstimateTable(
        block_codes=list(data.block_codes),
        time_labels=list(data.time_labels),
        values=means.reshape(data.n_blocks, data.n_times),
        counts=data.cell_counts,
        provenance=provenance,
    )


def estimate_table(predictions, data: PreparedDataset) -> EstimateTable:
    """Mean of the per-well predictions in each (block, period) cell."""
    return _cell_table(predictions, data, "model")


def observed_table(data: PreparedDataset, observed: Optional[np.ndarray] = None) -> EstimateTable:
    """Raw cell averages of the observed oil in barrels."""
    values = data.outcome_original() if observed is None else observed
    return _cell_table(values, data, "observed")


def aggregate_blocks(table: EstimateTable, blocks: Sequence[str], period: str,
                     weights: Union[None, str, Sequence[float]] = None) -> float:
    """
    Combines several blocks' estimates for one period. `weights` may be None
    (equal), "counts" (wells per cell) or explicit numbers. A block without
    wells in the period makes the aggregate NaN.
    """
    blocks = list(blocks)
    if not blocks:
        raise ValueError("aggregate_blocks needs at least one block")
    for code in blocks:
        if not is_valid_locator(code):
            raise ValueError(f"Invalid locator {code!r}")
        if code not in table.block_codes:
            raise KeyError(f"Block {code} is not in the table")
    if period not in table.time_labels:
        raise KeyError(f"Period {period} is not in the table")

    t = table.time_labels.index(period)
    rows = [table.block_codes.index(code) for code in blocks]
    values = table.values[rows, t]
    if np.isnan(values).any():
        return float("nan")

    if weights is None:
        w = np.ones(len(blocks))
    elif isinstance(weights, str):
        if weights != "counts":
            raise ValueError(f"Unknown weighting {weights!r}")
        w = table.counts[rows, t].astype(float)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(blocks),) or (w < 0).any() or w.sum() == 0:
            raise ValueError("explicit weights must be non-negative, one per block, not all zero")
    return float(np.average(values, weights=w))


def block_areas(codes: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame({"block": list(codes), "area_sq_miles": [block_area_sq_miles(c) for c in codes]})


@dataclass
class ReportBundle:
    """Everything the report command writes."""
    estimates: EstimateTable
    observed: EstimateTable
    histogram: pd.DataFrame
    summary: Dict
    trajectories: Optional[pd.DataFrame] = None
    aggregations: Optional[pd.DataFrame] = None
    extra_tables: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def write(self, output_dir: Path) -> List[Path]:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        written = []

        def target(name):
            path = output_dir / name
            written.append(path)
            return path

        self.estimates.to_csv(target("estimates.csv"))
        self.observed.to_csv(target("observed.csv"))
        self.histogram.to_csv(target("histogram.csv"), index=False)
        if self.trajectories is not None:
            self.trajectories.to_csv(target("trajectories.csv"), index=False, na_rep="NA")
        if self.aggregations is not None:
            self.aggregations.to_csv(target("aggregations.csv"), index=False, na_rep="NA")
        for name, frame in self.extra_tables.items():
            frame.to_csv(target(f"{name}.csv"), index=False, na_rep="NA")
        write_json(self.summary, target("report_summary.json"))
        return written


def build_report(draws: PosteriorDraws, data: PreparedDataset, config: RunConfig) -> ReportBundle:
    """
    Computes predictions with and without clamping, the fit metrics on the
    original scale and every table. The configured clamp setting drives the
    tables; both metric variants go in the summary.
    """
    kind = data.kind
    observed = data.outcome_original()
    raw = posterior_mean_predictions(draws, kind, data, clamp_negative=False)
    clamped = np.maximum(raw, 0.0)
    predictions = clamped if config.clamp_negative else raw

    estimates = estimate_table(predictions, data)
    observed_cells = observed_table(data, observed)

    summary = {
        "kind": kind.value,
        "n_wells": data.n_wells,
        "n_blocks": data.n_blocks,
        "n_times": data.n_times,
        "clamp_negative": config.clamp_negative,
        "negative_predictions": int((raw < 0).sum()),
        "rmsd": rmsd(predictions, observed),
        "discrepancy_interval_90": list(discrepancy_interval(predictions, observed)),
        "unclamped": {"rmsd": rmsd(raw, observed),
                      "discrepancy_interval_90": list(discrepancy_interval(raw, observed))},
        "clamped": {"rmsd": rmsd(clamped, observed),
                    "discrepancy_interval_90": list(discrepancy_interval(clamped, observed))},
        "empty_cells": int((estimates.counts == 0).sum()),
    }

    trajectories = None
    if kind.uses_time:
        trajectories = trajectories_frame(time_trajectories(draws, kind, data.time_labels))

    aggregations = None
    if config.aggregations:
        weights = "counts" if config.aggregation_weights == "counts" else None
        rows = []
        for group in config.aggregations:
            for period in estimates.time_labels:
                rows.append({
                    "blocks": "+".join(group),
                    "period": period,
                    "estimate": aggregate_blocks(estimates, group, period, weights),
                    "observed": aggregate_blocks(observed_cells, group, period, weights),
                })
        aggregations = pd.DataFrame(rows)

    logger.info("Report: RMSD %.2f bbl over %d wells (%d negative predictions)",
                summary["rmsd"], data.n_wells, summary["negative_predictions"])
    return ReportBundle(
        estimates=estimates,
        observed=observed_cells,
        histogram=histogram_data(predictions, observed, bins=config.histogram_bins),
        summary=summary,
        trajectories=trajectories,
        aggregations=aggregations,
        extra_tables={"block_areas": block_areas(data.block_codes)},
    )
