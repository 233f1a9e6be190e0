"""
Preprocessor Module.
Turns parsed well records into a model-ready PreparedDataset: rejection filters,
zero imputation, log transform, water/sand intensities, standardization and
the block/period indexing the hierarchical models use.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.config import ImputationGrouping, ModelKind, PipelinePolicy, TimeGranularity
from src.exceptions import DimensionError, PipelineError

logger = logging.getLogger(__name__)

# Per-well quantities that may be imputed and logged
VARIABLES = ("oil", "water", "sand", "lateral")

# Canonical row order. Everything downstream is indexed from this order.
CANONICAL_KEYS = ["locator", "period", "date", "well_id", "oil", "water", "sand", "lateral", "well_type"]

# Rejection rules, evaluated on the raw units; a row can trip several
FILTER_RULES = {
    "not_horizontal": lambda df: df["well_type"] != "horizontal",
    "negative_oil": lambda df: df["oil"] < 0,
    "negative_water": lambda df: df["water"] < 0,
    "negative_sand": lambda df: df["sand"] < 0,
    "nonpositive_lateral": lambda df: df["lateral"] <= 0,
}


# --- Elementary transforms ---

def filter_wells(df: pd.DataFrame) -> Tuple[pd.DataFrame, Dict[str, int]]:
    """
    Drops non-horizontal wells and rows with negative oil/water/sand or a
    non-positive lateral length.

    Returns:
        Tuple[pd.DataFrame, Dict[str, int]]: Kept rows (original relative
        order) and the number of rows each rule matched, plus `rejected_total`.
    """
    if df.empty:
        counts = {rule: 0 for rule in FILTER_RULES}
        counts["rejected_total"] = 0
        return df.copy(), counts

    masks = {rule: check(df).to_numpy() for rule, check in FILTER_RULES.items()}
    rejected = np.logical_or.reduce(list(masks.values()))

    counts = {rule: int(mask.sum()) for rule, mask in masks.items()}
    counts["rejected_total"] = int(rejected.sum())
    return df.loc[~rejected].reset_index(drop=True), counts


def count_zeros(df: pd.DataFrame) -> Dict[str, int]:
    return {var: int((df[var] == 0).sum()) for var in VARIABLES if var in df.columns}


def impute_zeros(df: pd.DataFrame, grouping: ImputationGrouping = ImputationGrouping.PREFIX4) -> pd.DataFrame:
    """
    Replaces zeros of each variable by the mean of the strictly positive values
    sharing the well's locator group (first 4 characters, or the whole block).
    Groups without a positive donor fall back to the global positive mean.
    """
    grouping = ImputationGrouping(grouping)
    out = df.copy()
    if out.empty:
        return out

    keys = out["locator"].str[:4] if grouping is ImputationGrouping.PREFIX4 else out["locator"]
    for var in VARIABLES:
        if var not in out.columns:
            continue
        values = out[var].astype(float)
        zeros = values == 0
        if not zeros.any():
            continue

        donors = values.where(values > 0)
        global_mean = donors.mean()
        if np.isnan(global_mean):
            raise PipelineError(f"Cannot impute '{var}': no strictly positive values in the data")

        group_mean = donors.groupby(keys).transform("mean")
        fallback = zeros & group_mean.isna()
        if fallback.any():
            logger.warning("%d zero %s value(s) imputed from the global mean (no donor in group)",
                           int(fallback.sum()), var)
        values[zeros] = group_mean[zeros].fillna(global_mean)
        out[var] = values
    return out


def log_transform(df: pd.DataFrame) -> pd.DataFrame:
    """Natural log of every per-well quantity. All values must be strictly positive."""
    out = df.copy()
    for var in VARIABLES:
        if var not in out.columns:
            continue
        values = out[var].astype(float)
        bad = ~(values > 0)
        if bad.any():
            raise PipelineError(
                f"log transform needs positive {var}; {int(bad.sum())} row(s) are <= 0 "
                "(run zero imputation first)"
            )
        out[var] = np.log(values)
    return out


def intensities(water, sand, lateral):
    """
    Completion intensities per unit lateral length: E=(W+S)/L, EW=W/L, ES=S/L.
    Rows with L == 0 get 0 for all three.
    """
    w = np.asarray(water, dtype=float)
    s = np.asarray(sand, dtype=float)
    l = np.asarray(lateral, dtype=float)
    zero = l == 0
    safe = np.where(zero, 1.0, l)
    e = np.where(zero, 0.0, (w + s) / safe)
    ew = np.where(zero, 0.0, w / safe)
    es = np.where(zero, 0.0, s / safe)
    if e.ndim == 0:
        return float(e), float(ew), float(es)
    return e, ew, es


def standardize(values, k: int) -> Tuple[np.ndarray, float, float]:
    """
    z = (x - mean) / (k * sd), sd with Bessel's correction.

    Returns:
        Tuple[np.ndarray, float, float]: (z, mean, sd).
    """
    if k not in (1, 2):
        raise ValueError(f"k must be 1 or 2, got {k}")
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise PipelineError("Standardization needs at least two values")
    mean = float(np.mean(x))
    sd = float(np.std(x, ddof=1))
    if not (np.isfinite(sd) and sd > 0):
        raise PipelineError("Cannot standardize a constant (or non-finite) variable")
    return (x - mean) / (k * sd), mean, sd


def group_averages(values, index, group_count: int, allow_empty: bool = True) -> np.ndarray:
    """
    Per-group mean of `values` for integer group ids in [0, group_count).
    Empty groups come back as NaN.
    """
    vals = np.asarray(values, dtype=float)
    idx = np.asarray(index, dtype=np.int64)
    if vals.shape != idx.shape:
        raise DimensionError(f"values {vals.shape} and index {idx.shape} differ in shape")
    if idx.size and (idx.min() < 0 or idx.max() >= group_count):
        raise DimensionError(f"group index out of range [0, {group_count})")

    sums = np.bincount(idx, weights=vals, minlength=group_count)
    counts = np.bincount(idx, minlength=group_count)
    if not allow_empty and (counts == 0).any():
        raise PipelineError(f"{int((counts == 0).sum())} group(s) have no members")
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


# --- Prepared dataset ---

@dataclass(frozen=True)
class Standardizer:
    """Affine map of one standardized variable back to its working scale."""
    mean: float
    sd: float
    k: int

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / (self.k * self.sd)

    def invert(self, z):
        return np.asarray(z, dtype=float) * (self.k * self.sd) + self.mean


_ARRAY_FIELDS = ("y", "l", "w", "e", "ew", "es",
                 "w_bar_b", "e_bar_b", "ew_bar_b", "es_bar_b", "ew_bar_t", "es_bar_t")


@dataclass
class PreparedDataset:
    """
    Model-ready arrays, one entry per well in canonical order.

    `block_of`/`time_of` are 0-based dense indices into `block_codes` and
    `time_labels`. Per-well covariates (`w`, `e`, `ew`, `es`) and their group
    averages are only present for the model kinds that use them; averages of
    empty groups are NaN.
    """
    kind: ModelKind
    policy: PipelinePolicy
    y: Optional[np.ndarray]
    l: np.ndarray
    block_of: np.ndarray
    time_of: np.ndarray
    block_codes: List[str]
    time_labels: List[str]
    well_ids: List[str]
    standardizers: Dict[str, Standardizer] = field(default_factory=dict)
    w: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None
    ew: Optional[np.ndarray] = None
    es: Optional[np.ndarray] = None
    w_bar_b: Optional[np.ndarray] = None
    e_bar_b: Optional[np.ndarray] = None
    ew_bar_b: Optional[np.ndarray] = None
    es_bar_b: Optional[np.ndarray] = None
    ew_bar_t: Optional[np.ndarray] = None
    es_bar_t: Optional[np.ndarray] = None

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        n = len(self.l)
        for name in ("block_of", "time_of"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (n,):
                raise DimensionError(f"{name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)
        if n and (self.block_of.max() >= self.n_blocks or self.time_of.max() >= self.n_times):
            raise DimensionError("block/time index exceeds the number of labels")

    @property
    def n_wells(self) -> int:
        return len(self.l)

    @property
    def n_blocks(self) -> int:
        return len(self.block_codes)

    @property
    def n_times(self) -> int:
        return len(self.time_labels)

    @property
    def n_per_block(self) -> np.ndarray:
        return np.bincount(self.block_of, minlength=self.n_blocks)

    @property
    def n_per_time(self) -> np.ndarray:
        return np.bincount(self.time_of, minlength=self.n_times)

    @property
    def cell_counts(self) -> np.ndarray:
        """Wells per (block, period) cell, shape (B, T)."""
        counts = np.zeros((self.n_blocks, self.n_times), dtype=np.int64)
        np.add.at(counts, (self.block_of, self.time_of), 1)
        return counts

    def outcome_original(self, z=None) -> np.ndarray:
        """Maps standardized outcome values (default: the data) back to barrels."""
        z = self.y if z is None else z
        values = self.standardizers["y"].invert(z)
        return np.exp(values) if self.policy.log_transform else values

    def with_outcome(self, y: np.ndarray, standardizer: Optional[Standardizer] = None) -> "PreparedDataset":
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n_wells,):
            raise DimensionError(f"outcome has shape {y.shape}, expected ({self.n_wells},)")
        data = {**self.__dict__, "y": y, "standardizers": dict(self.standardizers)}
        if standardizer is not None:
            data["standardizers"]["y"] = standardizer
        return PreparedDataset(**data)

    def to_dict(self) -> Dict:
        policy = {
            "time_granularity": self.policy.time_granularity.value,
            "scale_k": self.policy.scale_k,
            "log_transform": self.policy.log_transform,
            "impute_zeros": self.policy.impute_zeros,
            "imputation_grouping": self.policy.imputation_grouping.value,
            "first_period": self.policy.first_period,
            "last_period": self.policy.last_period,
        }
        payload = {
            "kind": self.kind.value,
            "policy": policy,
            "block_codes": list(self.block_codes),
            "time_labels": list(self.time_labels),
            "well_ids": list(self.well_ids),
            "block_of": self.block_of.tolist(),
            "time_of": self.time_of.tolist(),
            "standardizers": {name: {"mean": s.mean, "sd": s.sd, "k": s.k}
                              for name, s in self.standardizers.items()},
        }
        for name in _ARRAY_FIELDS:
            value = getattr(self, name)
            payload[name] = None if value is None else np.asarray(value, dtype=float).tolist()
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> "PreparedDataset":
        arrays = {}
        for name in _ARRAY_FIELDS:
            value = payload.get(name)
            arrays[name] = None if value is None else np.array(
                [np.nan if v is None else v for v in value], dtype=float)
        return cls(
            kind=ModelKind.parse(payload["kind"]),
            policy=PipelinePolicy(**payload["policy"]),
            block_of=np.asarray(payload["block_of"], dtype=np.int64),
            time_of=np.asarray(payload["time_of"], dtype=np.int64),
            block_codes=list(payload["block_codes"]),
            time_labels=list(payload["time_labels"]),
            well_ids=list(payload["well_ids"]),
            standardizers={name: Standardizer(float(s["mean"]), float(s["sd"]), int(s["k"]))
                           for name, s in payload["standardizers"].items()},
            **arrays,
        )


def period_labels(dates: pd.Series, granularity: TimeGranularity) -> pd.Series:
    """'2015' for yearly periods, '2015-03' for monthly ones."""
    granularity = TimeGranularity(granularity)
    return pd.to_datetime(dates).dt.to_period(granularity.pandas_freq).astype(str)


def canonical_order(df: pd.DataFrame) -> pd.DataFrame:
    """Stable sort by block, period, date, well id and then the values."""
    keys = [k for k in CANONICAL_KEYS if k in df.columns]
    return df.sort_values(keys, kind="mergesort").reset_index(drop=True)


def _time_axis(periods: pd.Series, policy: PipelinePolicy) -> List[str]:
    observed = sorted(periods.unique())
    if policy.first_period is None and policy.last_period is None:
        return observed
    freq = policy.time_granularity.pandas_freq
    start = policy.first_period or observed[0]
    end = policy.last_period or observed[-1]
    labels = pd.period_range(start=start, end=end, freq=freq).astype(str).tolist()
    if not labels:
        raise PipelineError(f"Empty period range {start}..{end}")
    return labels


def build_design(df: pd.DataFrame, policy: PipelinePolicy, kind, with_outcome: bool = True) -> PreparedDataset:
    """
    Indexes and standardizes (already filtered/imputed/logged) wells for a
    model kind.

    Args:
        df (pd.DataFrame): Wells frame (working scale).
        policy (PipelinePolicy): Granularity and standardization settings.
        kind: Model kind; decides which covariates and averages are built.
        with_outcome (bool): Standardize the oil column into `y`. Synthetic
            generation builds the covariates before any outcome exists.

    Returns:
        PreparedDataset
    """
    kind = ModelKind.parse(kind)
    if len(df) < 2:
        raise PipelineError(f"At least two wells are needed after filtering, got {len(df)}")

    frame = df.copy()
    frame["period"] = period_labels(frame["date"], policy.time_granularity)
    frame = canonical_order(frame)

    block_codes = sorted(frame["locator"].unique())
    time_labels = _time_axis(frame["period"], policy)
    if kind.uses_time and len(time_labels) < 2:
        raise PipelineError(f"Model kind {kind.value} needs at least two periods, got {len(time_labels)}")

    block_of = pd.Categorical(frame["locator"], categories=block_codes).codes.astype(np.int64)
    time_of = pd.Categorical(frame["period"], categories=time_labels).codes.astype(np.int64)
    if (time_of < 0).any():
        outside = sorted(set(frame.loc[time_of < 0, "period"]))
        raise PipelineError(f"Wells fall outside the configured periods: {', '.join(outside)}")

    n_blocks, n_times = len(block_codes), len(time_labels)
    k = policy.scale_k
    standardizers: Dict[str, Standardizer] = {}

    def scaled(name: str, values) -> np.ndarray:
        z, mean, sd = standardize(values, k)
        standardizers[name] = Standardizer(mean, sd, k)
        return z

    water = frame["water"].to_numpy(dtype=float)
    sand = frame["sand"].to_numpy(dtype=float)
    lateral = frame["lateral"].to_numpy(dtype=float)

    arrays = {"l": scaled("l", lateral)}
    arrays["y"] = scaled("y", frame["oil"].to_numpy(dtype=float)) if with_outcome else None

    if kind is ModelKind.A:
        arrays["w"] = scaled("w", water)
        arrays["w_bar_b"] = group_averages(arrays["w"], block_of, n_blocks)
    elif kind is ModelKind.B:
        e, _, _ = intensities(water, sand, lateral)
        arrays["e"] = scaled("e", e)
        arrays["e_bar_b"] = group_averages(arrays["e"], block_of, n_blocks)
    else:
        _, ew, es = intensities(water, sand, lateral)
        arrays["ew"] = scaled("ew", ew)
        arrays["es"] = scaled("es", es)
        arrays["ew_bar_b"] = group_averages(arrays["ew"], block_of, n_blocks)
        arrays["es_bar_b"] = group_averages(arrays["es"], block_of, n_blocks)
        arrays["ew_bar_t"] = group_averages(arrays["ew"], time_of, n_times)
        arrays["es_bar_t"] = group_averages(arrays["es"], time_of, n_times)

    return PreparedDataset(
        kind=kind,
        policy=policy,
        block_of=block_of,
        time_of=time_of,
        block_codes=block_codes,
        time_labels=time_labels,
        well_ids=frame["well_id"].astype(str).tolist(),
        standardizers=standardizers,
        **arrays,
    )


class WellPreprocessor:
    """
    Runs the full preprocessing pipeline for one model kind and keeps a
    quality report of what each stage did.
    """

    def __init__(self, kind, policy: Optional[PipelinePolicy] = None):
        self.kind = ModelKind.parse(kind)
        self.policy = policy or PipelinePolicy.for_kind(self.kind)
        if self.kind is ModelKind.C and not (self.policy.log_transform and self.policy.impute_zeros):
            raise ValueError("Model kind C requires log_transform and impute_zeros")
        self.quality_report: Dict = {}

    def prepare_frame(self, df: pd.DataFrame) -> pd.DataFrame:
        """Filter, impute and log according to the policy. Records the quality report."""
        initial_rows = len(df)
        kept, rejections = filter_wells(df)

        zeros = count_zeros(kept)
        frame = kept
        if self.policy.impute_zeros:
            frame = impute_zeros(frame, self.policy.imputation_grouping)
        if self.policy.log_transform:
            frame = log_transform(frame)

        self.quality_report = {
            "initial_rows": initial_rows,
            "final_rows": len(frame),
            "rejections": rejections,
            "zeros": zeros,
            "imputed": zeros if self.policy.impute_zeros else {var: 0 for var in zeros},
            "pct_data_kept": round(len(frame) / initial_rows * 100, 2) if initial_rows > 0 else 0,
        }
        logger.info("Filtering kept %d of %d wells (%d rejected)",
                    len(frame), initial_rows, rejections["rejected_total"])
        return frame

    def run(self, df: pd.DataFrame) -> PreparedDataset:
        frame = self.prepare_frame(df)
        dataset = build_design(frame, self.policy, self.kind)
        counts = dataset.cell_counts
        self.quality_report.update({
            "n_wells": dataset.n_wells,
            "n_blocks": dataset.n_blocks,
            "n_times": dataset.n_times,
            "empty_cells": int((counts == 0).sum()),
            "empty_periods": [label for label, n in zip(dataset.time_labels, dataset.n_per_time) if n == 0],
        })
        logger.info("Prepared %d wells in %d blocks x %d periods", dataset.n_wells,
                    dataset.n_blocks, dataset.n_times)
        return dataset

    def get_quality_report(self) -> Dict:
        """Returns the dictionary with quality metrics from the last run."""
        return self.quality_report
