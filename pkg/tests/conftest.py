from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.data_loader import CSV_COLUMNS, WELL_FRAME_COLUMNS

DATA_DIR = Path(__file__).parent / "data"


def make_wells(rows):
    """Parsed wells frame from (well_id, date, locator, oil, water, sand, lateral[, well_type]) tuples."""
    records = []
    for row in rows:
        well_id, day, locator, oil, water, sand, lateral = row[:7]
        well_type = row[7] if len(row) > 7 else "horizontal"
        records.append({
            "well_id": well_id, "date": pd.Timestamp(day), "locator": locator,
            "oil": float(oil), "water": float(water), "sand": float(sand),
            "lateral": float(lateral), "well_type": well_type,
        })
    return pd.DataFrame(records, columns=WELL_FRAME_COLUMNS)


def write_csv(path: Path, rows, header=CSV_COLUMNS) -> Path:
    lines = [",".join(header)] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def random_wells():
    """Sixty wells in six blocks over three years with lognormal inputs."""
    rng = np.random.default_rng(42)
    blocks = ["DN87au", "DN87cm", "DN87cq", "DN97aa", "DN97ab", "DN98xx"]
    rows = []
    for i in range(60):
        rows.append((
            f"W{i:03d}",
            f"{2015 + i % 3}-{1 + i % 12:02d}-15",
            blocks[i % len(blocks)],
            rng.lognormal(np.log(300), 0.5),
            rng.lognormal(np.log(8e6), 0.5),
            rng.lognormal(np.log(9e6), 0.5),
            rng.lognormal(np.log(1e4), 0.3),
        ))
    return make_wells(rows)


def small_dataset(kind, n_blocks=5, n_times=4, n_wells=50, seed=0):
    """PreparedDataset with random standardized-scale arrays; every block and period is used."""
    from src.config import ModelKind, PipelinePolicy
    from src.preprocessor import PreparedDataset, Standardizer, group_averages

    kind = ModelKind.parse(kind)
    n_times = 1 if kind is ModelKind.A else n_times
    rng = np.random.default_rng(seed)
    block_of = np.arange(n_wells) % n_blocks
    time_of = (np.arange(n_wells) // n_blocks) % n_times
    arrays = {"y": rng.normal(0, 0.5, n_wells), "l": rng.normal(0, 0.5, n_wells)}
    if kind is ModelKind.A:
        arrays["w"] = rng.normal(0, 1, n_wells)
        arrays["w_bar_b"] = group_averages(arrays["w"], block_of, n_blocks)
    elif kind is ModelKind.B:
        arrays["e"] = rng.normal(0, 0.5, n_wells)
        arrays["e_bar_b"] = group_averages(arrays["e"], block_of, n_blocks)
    else:
        arrays["ew"] = rng.normal(0, 0.5, n_wells)
        arrays["es"] = rng.normal(0, 0.5, n_wells)
        arrays["ew_bar_b"] = group_averages(arrays["ew"], block_of, n_blocks)
        arrays["es_bar_b"] = group_averages(arrays["es"], block_of, n_blocks)
        arrays["ew_bar_t"] = group_averages(arrays["ew"], time_of, n_times)
        arrays["es_bar_t"] = group_averages(arrays["es"], time_of, n_times)
    policy = PipelinePolicy.for_kind(kind)
    if policy.log_transform:
        y_scale = Standardizer(float(np.log(300.0)), 0.4, policy.scale_k)
    else:
        y_scale = Standardizer(300.0, 100.0, policy.scale_k)
    return PreparedDataset(
        kind=kind,
        policy=policy,
        block_of=block_of,
        time_of=time_of,
        block_codes=[f"DN87{chr(97 + i // 24)}{chr(97 + i % 24)}" for i in range(n_blocks)],
        time_labels=[str(2015 + t) for t in range(n_times)],
        well_ids=[f"W{i:04d}" for i in range(n_wells)],
        standardizers={"y": y_scale},
        **arrays,
    )
