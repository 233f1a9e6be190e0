import numpy as np
import pytest

from simulation.engine import fitted_truth
from simulation.scenarios import SCENARIOS
from src.config import SamplerConfig
from src.models import ParamLayout
from src.preprocessor import WellPreprocessor
from src.report import estimate_table, observed_table, posterior_mean_predictions
from src.sampler import fit


def _coverage(draws, truth, level=0.90):
    low, high = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return (low <= truth) & (truth <= high)


@pytest.mark.slow
def test_spatiotemporal_fit_recovers_the_truth():
    scenario = SCENARIOS["recovery_spatiotemporal"]
    sim = scenario.generate()
    data = WellPreprocessor(scenario.kind).run(sim.wells)
    truth = fitted_truth(sim.truth, data)

    result = fit(scenario.kind, data,
                 sampler_config=SamplerConfig(chains=3, warmup=500, draws=1500, seed=scenario.seed))
    assert result.divergences == 0
    assert result.max_rhat <= 1.05

    layout = ParamLayout(scenario.kind, data.n_blocks, data.n_times)
    flat = result.draws.flat()
    alpha = _coverage(flat[:, layout.slices["alpha"]], truth["alpha"])
    tau = _coverage(flat[:, layout.slices["tau"]], truth["tau"])
    assert alpha.mean() >= 0.8
    assert tau.sum() >= 4


def _cell_mse(table, truth):
    occupied = table.counts > 0
    return float(np.mean((table.values[occupied] - truth.values[occupied]) ** 2))


@pytest.mark.slow
def test_pooled_estimates_beat_raw_averages_on_sparse_cells():
    scenario = SCENARIOS["sparse_cells"]
    sim = scenario.generate()
    data = WellPreprocessor(scenario.kind).run(sim.wells)
    counts = data.cell_counts[data.cell_counts > 0]
    assert np.mean(counts <= 2) >= 0.3

    result = fit(scenario.kind, data,
                 sampler_config=SamplerConfig(chains=3, warmup=500, draws=1000, seed=scenario.seed))
    predictions = posterior_mean_predictions(result.draws, scenario.kind, data)

    truth = estimate_table(sim.expected_oil, data)
    model_mse = _cell_mse(estimate_table(predictions, data), truth)
    raw_mse = _cell_mse(observed_table(data), truth)
    assert model_mse < raw_mse
