"""
Convergence diagnostics for multi-chain MCMC output.

Inputs are arrays of shape (chains, draws). R-hat is the rank-normalized
split value (the larger of bulk and folded), ESS the bulk value, both from
arviz. Degenerate inputs (constant draws, too few draws) give NaN.
"""
import logging
import warnings
from typing import Dict, Optional, Sequence

import arviz as az
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MIN_DRAWS = 4

SUMMARY_COLUMNS = ["mean", "sd", "q5", "q95", "mcse_mean", "ess_bulk", "rhat"]


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"Expected (chains, draws), got shape {x.shape}")
    return x


def _degenerate(x: np.ndarray) -> bool:
    return x.shape[1] < MIN_DRAWS or not np.all(np.isfinite(x)) or np.ptp(x) == 0


def _finite_or_nan(value) -> float:
    value = float(value)
    return value if np.isfinite(value) else np.nan


def split_rhat(x) -> float:
    """
    Rank-normalized split R-hat: the larger of the bulk value and the value
    for the folded draws |x - median|.
    """
    x = _as_chains(x)
    if _degenerate(x):
        return np.nan
    return _finite_or_nan(az.rhat(x, method="rank"))


def ess_bulk(x) -> float:
    """Effective sample size of the rank-normalized split chains."""
    x = _as_chains(x)
    if _degenerate(x):
        return np.nan
    return _finite_or_nan(az.ess(x, method="bulk"))


def ess_mean(x) -> float:
    """Effective sample size for the posterior mean (split chains, no ranking)."""
    x = _as_chains(x)
    if _degenerate(x):
        return np.nan
    return _finite_or_nan(az.ess(x, method="mean"))


def mcse_mean(x) -> float:
    x = _as_chains(x)
    if _degenerate(x):
        return np.nan
    return _finite_or_nan(az.mcse(x, method="mean"))


def summarize(draws: np.ndarray, names: Sequence[str],
              derived: Optional[Dict[str, np.ndarray]] = None) -> pd.DataFrame:
    """
    Posterior summary table.

    Args:
        draws: Array (chains, draws, dim).
        names: Parameter names, one per dim.
        derived: Extra quantities, each (chains, draws), summarized after the
            parameters.

    Returns:
        pd.DataFrame indexed by parameter with mean, sd, q5, q95, mcse_mean,
        ess_bulk and rhat columns.
    """
    draws = np.asarray(draws, dtype=float)
    columns = {name: draws[:, :, i] for i, name in enumerate(names)}
    columns.update({name: _as_chains(values) for name, values in (derived or {}).items()})

    idata = az.from_dict(posterior=columns)
    with warnings.catch_warnings():
        # arviz warns on short or constant chains; those rows are masked below
        warnings.simplefilter("ignore")
        diag = az.summary(idata, kind="diagnostics", round_to="none")

    rows = []
    for name, values in columns.items():
        flat = values.reshape(-1)
        q5, q95 = np.quantile(flat, [0.05, 0.95])
        degenerate = _degenerate(values)
        rows.append({
            "parameter": name,
            "mean": float(flat.mean()),
            "sd": float(flat.std(ddof=1)) if flat.size > 1 else np.nan,
            "q5": float(q5),
            "q95": float(q95),
            "mcse_mean": np.nan if degenerate else _finite_or_nan(diag.loc[name, "mcse_mean"]),
            "ess_bulk": np.nan if degenerate else _finite_or_nan(diag.loc[name, "ess_bulk"]),
            "rhat": np.nan if degenerate else _finite_or_nan(diag.loc[name, "r_hat"]),
        })
    undefined = [row["parameter"] for row in rows if np.isnan(row["rhat"])]
    if undefined:
        logger.warning("R-hat undefined for %d quantities (constant or too few draws)", len(undefined))
    return pd.DataFrame(rows, columns=["parameter"] + SUMMARY_COLUMNS).set_index("parameter")
