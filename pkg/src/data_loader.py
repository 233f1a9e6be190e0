"""
Data Loader Module.
Responsible for ingesting well records from CSV files and for persisting the
pipeline artifacts (prepared datasets, posterior draws, run manifests).
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from src.exceptions import LocatorError, LocatorParseError, RowParseError, SchemaError
from src.grid import encode_locator, parse_locator

logger = logging.getLogger(__name__)

# Input schema, in file order
CSV_COLUMNS = [
    "well_id", "date", "lat", "lon", "locator",
    "oil_bbl", "water_gal", "sand_lb", "lateral_ft", "well_type",
]

# File column -> working column
NUMERIC_COLUMNS = {
    "oil_bbl": "oil",
    "water_gal": "water",
    "sand_lb": "sand",
    "lateral_ft": "lateral",
}

WELL_TYPES = ("horizontal", "vertical", "other")

# Columns of a parsed wells frame
WELL_FRAME_COLUMNS = ["well_id", "date", "locator", "oil", "water", "sand", "lateral", "well_type"]


@dataclass(frozen=True)
class WellRecord:
    """
    One well observation. Units: oil in barrels, water in gallons, sand in
    pounds, lateral length in feet. Exactly one of (lat, lon) or locator is set.
    """
    well_id: str
    date: date
    oil: float
    water: float
    sand: float
    lateral: float
    well_type: str = "horizontal"
    lat: Optional[float] = None
    lon: Optional[float] = None
    locator: Optional[str] = None

    def resolved_locator(self) -> str:
        has_coords = self.lat is not None and self.lon is not None
        if has_coords == (self.locator is not None):
            raise SchemaError(f"Well {self.well_id}: give either lat/lon or locator, not both or neither")
        if self.locator is not None:
            parse_locator(self.locator)
            return self.locator
        return encode_locator(self.lat, self.lon)


def wells_frame(records: Iterable[WellRecord]) -> pd.DataFrame:
    """
    Builds a parsed wells frame (the same shape `read_wells` returns) from records.
    """
    rows = [{
        "well_id": r.well_id,
        "date": pd.Timestamp(r.date),
        "locator": r.resolved_locator(),
        "oil": float(r.oil),
        "water": float(r.water),
        "sand": float(r.sand),
        "lateral": float(r.lateral),
        "well_type": r.well_type,
    } for r in records]
    frame = pd.DataFrame(rows, columns=WELL_FRAME_COLUMNS)
    frame["date"] = pd.to_datetime(frame["date"])
    return frame


def _first_bad_row(raw: pd.DataFrame, masks: Dict[str, pd.Series], reason: str) -> None:
    """Raises RowParseError for the earliest flagged row across all masks."""
    first = None
    for column, mask in masks.items():
        if mask.any():
            pos = int(np.flatnonzero(mask.to_numpy())[0])
            if first is None or pos < first[0]:
                first = (pos, column)
    if first is not None:
        pos, column = first
        raise RowParseError(pos + 2, column, raw[column].iloc[pos], reason)


def read_wells(filepath: Path) -> pd.DataFrame:
    """
    Loads well records from a CSV file with the documented schema:
    well_id,date,lat,lon,locator,oil_bbl,water_gal,sand_lb,lateral_ft,well_type

    Either lat+lon or locator must be filled on every row. Coordinates are
    resolved to 6-character Maidenhead blocks. No filtering happens here.

    Args:
        filepath (Path): Path to the CSV file.

    Returns:
        pd.DataFrame: One row per well with columns WELL_FRAME_COLUMNS.
    """
    filepath = Path(filepath)
    if not filepath.exists():
        raise FileNotFoundError(f"Wells file not found: {filepath}")

    try:
        raw = pd.read_csv(filepath, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{filepath} is empty; a header row is required") from None

    raw.columns = raw.columns.str.strip()
    missing = [c for c in CSV_COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"{filepath} is missing columns: {', '.join(missing)}")

    raw = raw[CSV_COLUMNS].apply(lambda col: col.str.strip())
    if raw.empty:
        logger.info("Loaded 0 well records from %s", filepath)
        return pd.DataFrame(columns=WELL_FRAME_COLUMNS)

    # Numeric inputs
    numeric = {col: pd.to_numeric(raw[col], errors="coerce") for col in NUMERIC_COLUMNS}
    _first_bad_row(raw, {col: ~np.isfinite(values) for col, values in numeric.items()},
                   "not a finite number")

    dates = pd.to_datetime(raw["date"], format="%Y-%m-%d", errors="coerce")
    _first_bad_row(raw, {"date": dates.isna()}, "expected YYYY-MM-DD")

    well_type = raw["well_type"].str.lower()
    _first_bad_row(raw, {"well_type": ~well_type.isin(WELL_TYPES)},
                   f"expected one of {', '.join(WELL_TYPES)}")

    _first_bad_row(raw, {"well_id": raw["well_id"] == ""}, "well_id is required")

    # Location: exactly one form per row
    has_lat = raw["lat"] != ""
    has_lon = raw["lon"] != ""
    has_loc = raw["locator"] != ""
    has_coords = has_lat & has_lon
    bad_form = (has_lat != has_lon) | (has_coords == has_loc)
    if bad_form.any():
        pos = int(np.flatnonzero(bad_form.to_numpy())[0])
        raise SchemaError(
            f"{filepath}, line {pos + 2}: fill either lat+lon or locator (exactly one location form)"
        )

    lat = pd.to_numeric(raw["lat"].where(has_coords), errors="coerce")
    lon = pd.to_numeric(raw["lon"].where(has_coords), errors="coerce")
    _first_bad_row(raw, {"lat": has_coords & ~np.isfinite(lat), "lon": has_coords & ~np.isfinite(lon)},
                   "not a finite number")

    locators: List[str] = []
    for pos in range(len(raw)):
        line = pos + 2
        if has_coords.iat[pos]:
            try:
                locators.append(encode_locator(float(lat.iat[pos]), float(lon.iat[pos])))
            except LocatorError as e:
                raise RowParseError(line, e.name, raw[e.name].iat[pos], str(e)) from None
        else:
            code = raw["locator"].iat[pos]
            try:
                parse_locator(code)
            except LocatorParseError as e:
                raise RowParseError(line, "locator", code, str(e)) from None
            locators.append(code)

    df = pd.DataFrame({
        "well_id": raw["well_id"],
        "date": dates,
        "locator": locators,
        **{name: numeric[col].astype(float) for col, name in NUMERIC_COLUMNS.items()},
        "well_type": well_type,
    }, columns=WELL_FRAME_COLUMNS)

    logger.info("Loaded %d well records from %s", len(df), filepath)
    return df


def write_wells(df: pd.DataFrame, filepath: Path, coordinates: Optional[pd.DataFrame] = None) -> None:
    """
    Writes a wells frame in the input CSV schema. When `coordinates` (lat, lon
    columns aligned with `df`) is given the location is written as lat/lon,
    otherwise as locator.
    """
    out = pd.DataFrame({"well_id": df["well_id"], "date": pd.to_datetime(df["date"]).dt.strftime("%Y-%m-%d")})
    if coordinates is not None:
        out["lat"] = coordinates["lat"].map(repr)
        out["lon"] = coordinates["lon"].map(repr)
        out["locator"] = ""
    else:
        out["lat"] = ""
        out["lon"] = ""
        out["locator"] = df["locator"]
    for col, name in NUMERIC_COLUMNS.items():
        out[col] = df[name].map(repr)
    out["well_type"] = df["well_type"]
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    out[CSV_COLUMNS].to_csv(filepath, index=False)


# --- JSON artifacts ---

def jsonable(value):
    """Converts numpy containers/scalars to plain JSON values; NaN and inf become None."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(payload: Dict, filepath: Path) -> None:
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, "w", encoding="utf-8") as handle:
        json.dump(jsonable(payload), handle, indent=2, sort_keys=True, allow_nan=False)
        handle.write("\n")


def read_json(filepath: Path) -> Dict:
    filepath = Path(filepath)
    if not filepath.exists():
        raise FileNotFoundError(f"File not found: {filepath}")
    with open(filepath, encoding="utf-8") as handle:
        return json.load(handle)


def file_sha256(filepath: Path) -> str:
    digest = hashlib.sha256()
    with open(filepath, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_dataset(dataset, filepath: Path) -> None:
    """Serializes a PreparedDataset to JSON (deterministic key order)."""
    write_json(dataset.to_dict(), filepath)
    logger.info("Prepared dataset written to %s", filepath)


def load_dataset(filepath: Path):
    from src.preprocessor import PreparedDataset

    return PreparedDataset.from_dict(read_json(filepath))


# --- Posterior draws ---

def write_draws(draws, filepath: Path) -> None:
    """Columnar draws CSV: chain, draw, one column per flat parameter, sampler stats."""
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    draws.to_frame().to_csv(filepath, index=False, float_format="%.17g")
    logger.info("Draws written to %s", filepath)


def read_draws(filepath: Path):
    from src.sampler import PosteriorDraws

    filepath = Path(filepath)
    if not filepath.exists():
        raise FileNotFoundError(f"Draws file not found: {filepath}")
    return PosteriorDraws.from_frame(pd.read_csv(filepath))


def manifest(command: str, config: Dict, inputs: Iterable[Path], outputs: Iterable[Path], **extra) -> Dict:
    """Provenance record written next to every command's outputs."""
    return {
        "command": command,
        "config": config,
        "inputs": {str(p): file_sha256(p) for p in inputs if Path(p).exists()},
        "outputs": sorted(str(Path(p).name) for p in outputs),
        **extra,
    }
