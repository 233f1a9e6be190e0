import numpy as np
import pandas as pd
import pytest

from simulation.engine import (
    SyntheticTruth, SyntheticWellGenerator, allocate_cells, fitted_truth, synthetic_blocks,
)
from simulation.scenarios import SCENARIOS
from src.config import OIL_FLOOR_BBL, ModelKind
from src.data_loader import read_json, read_wells
from src.grid import is_valid_locator
from src.models import ParamLayout, SmallAreaModel
from src.preprocessor import WellPreprocessor


def _pack(kind, data, values):
    layout = ParamLayout(kind, data.n_blocks, data.n_times)
    packed = {k: v for k, v in values.items() if not k.startswith("sigma_")}
    packed["log_sigma_y"] = np.log(values["sigma_y"])
    if "sigma_beta" in values:
        packed["log_sigma_beta"] = np.log(values["sigma_beta"])
    return layout.pack(packed)


def test_allocate_cells_covers_every_block_and_period():
    rng = np.random.default_rng(0)
    counts = allocate_cells(12, 5, 40, rng, concentration=0.2)
    assert counts.shape == (12, 5)
    assert counts.sum() == 40
    assert (counts.sum(axis=1) >= 1).all()
    assert (counts.sum(axis=0) >= 1).all()
    with pytest.raises(ValueError):
        allocate_cells(12, 5, 16, rng)


def test_synthetic_blocks_are_distinct_valid_locators():
    codes = synthetic_blocks(50, np.random.default_rng(1))
    assert len(set(codes)) == 50
    assert codes == sorted(codes)
    assert all(is_valid_locator(code) for code in codes)


@pytest.mark.parametrize("kind, n_times", [("A", 1), ("B", 4), ("C", 4)])
def test_generation_is_reproducible(kind, n_times):
    first = SyntheticWellGenerator(kind, 8, n_times, 120, seed=3).generate()
    second = SyntheticWellGenerator(kind, 8, n_times, 120, seed=3).generate()
    pd.testing.assert_frame_equal(first.wells, second.wells)
    np.testing.assert_array_equal(first.outcome, second.outcome)


@pytest.mark.parametrize("kind, n_times", [("A", 1), ("B", 4), ("C", 4)])
def test_generated_wells_prepare_to_the_generation_design(kind, n_times):
    sim = SyntheticWellGenerator(kind, 8, n_times, 150, seed=11).generate()
    data = WellPreprocessor(kind).run(sim.wells)
    assert data.well_ids == sim.design.well_ids
    assert data.block_codes == sim.truth.block_codes
    assert (data.n_blocks, data.n_times, data.n_wells) == (8, n_times, 150)
    np.testing.assert_allclose(data.l, sim.design.l, atol=1e-12)


@pytest.mark.parametrize("kind, n_times", [("A", 1), ("B", 4), ("C", 4)])
def test_fitted_truth_reproduces_expected_oil(kind, n_times):
    sim = SyntheticWellGenerator(kind, 8, n_times, 150, seed=5).generate()
    data = WellPreprocessor(kind).run(sim.wells)
    theta = _pack(kind, data, fitted_truth(sim.truth, data))
    mu = SmallAreaModel(kind, data).predict_mean(theta)
    np.testing.assert_allclose(data.outcome_original(mu), sim.expected_oil, rtol=1e-9)


def test_fitted_truth_sigma_matches_standardized_noise():
    sim = SyntheticWellGenerator("B", 10, 4, 400, seed=2).generate({"sigma_y": 0.5})
    data = WellPreprocessor("B").run(sim.wells)
    fitted = fitted_truth(sim.truth, data)
    std = data.standardizers["y"]
    assert float(fitted["sigma_y"]) == pytest.approx(0.5 * sim.truth.oil_scale / (std.k * std.sd))


def test_linear_oil_has_the_documented_floor():
    sim = SyntheticWellGenerator("B", 6, 3, 90, seed=8).generate()
    assert sim.wells["oil"].min() == pytest.approx(OIL_FLOOR_BBL)


def test_truth_overrides():
    sim = SyntheticWellGenerator("C", 6, 3, 90, seed=8).generate({"sigma_y": 0.25})
    assert float(sim.truth.params["sigma_y"]) == 0.25
    with pytest.raises(KeyError):
        SyntheticWellGenerator("B", 6, 3, 90).generate({"beta": 1.0})


def test_time_kinds_need_several_periods():
    with pytest.raises(ValueError):
        SyntheticWellGenerator("B", 6, 1, 90)


def test_written_files_read_back(tmp_path):
    sim = SyntheticWellGenerator("B", 6, 3, 90, seed=4).generate()
    wells_path, truth_path = sim.write(tmp_path)
    wells = read_wells(wells_path)
    assert wells["locator"].tolist() == sim.wells["locator"].tolist()
    np.testing.assert_array_equal(wells["oil"].to_numpy(), sim.wells["oil"].to_numpy())

    truth = SyntheticTruth.from_dict(read_json(truth_path))
    assert truth.kind is ModelKind.B
    np.testing.assert_array_equal(truth.theta(), sim.truth.theta())


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenarios_are_consistent(name):
    scenario = SCENARIOS[name]
    generator = scenario.generator()
    assert generator.seed == scenario.seed
    assert scenario.n_wells >= scenario.n_blocks + scenario.n_times
    assert scenario.kind.uses_time == (scenario.n_times > 1)
    assert generator.kind is scenario.kind
