import numpy as np
import pytest

from src.diagnostics import ess_bulk, ess_mean, mcse_mean, split_rhat, summarize


def test_rhat_of_iid_chains_is_near_one():
    x = np.random.default_rng(0).normal(size=(2, 1000))
    assert split_rhat(x) <= 1.01


def test_rhat_flags_offset_chains():
    x = np.random.default_rng(1).normal(size=(2, 1000))
    x[1] += 5.0
    assert split_rhat(x) > 1.1


def test_rhat_flags_a_trending_chain():
    x = np.random.default_rng(2).normal(size=(2, 1000))
    x[0] += np.linspace(0, 4, 1000)
    assert split_rhat(x) > 1.1


def test_rhat_detects_scale_differences_through_folding():
    rng = np.random.default_rng(3)
    x = np.vstack([rng.normal(0, 1, 1000), rng.normal(0, 5, 1000)])
    assert split_rhat(x) > 1.1


def test_constant_draws_give_nan():
    x = np.full((2, 100), 3.0)
    assert np.isnan(split_rhat(x))
    assert np.isnan(ess_bulk(x))
    assert np.isnan(mcse_mean(x))


def test_too_few_draws_give_nan():
    assert np.isnan(split_rhat(np.random.default_rng(0).normal(size=(2, 3))))


def test_ess_of_iid_draws_matches_their_count():
    x = np.random.default_rng(4).normal(size=(3, 2500))
    assert 0.8 * x.size <= ess_bulk(x) <= 1.2 * x.size
    assert 0.8 * x.size <= ess_mean(x) <= 1.2 * x.size


def test_anticorrelated_chain_is_superefficient():
    rng = np.random.default_rng(5)
    x = np.empty((1, 2000))
    x[0, 0] = rng.normal()
    for i in range(1, x.shape[1]):
        x[0, i] = -0.6 * x[0, i - 1] + rng.normal()
    assert ess_mean(x) > x.size


def test_alternating_chain_is_superefficient():
    signs = np.where(np.arange(2000) % 2 == 0, 1.0, -1.0)
    x = (signs * (1.0 + 0.01 * np.random.default_rng(6).random(2000)))[None, :]
    assert ess_bulk(x) > x.size


def test_autocorrelated_chain_has_fewer_effective_draws():
    rng = np.random.default_rng(7)
    x = np.empty((2, 3000))
    x[:, 0] = rng.normal(size=2)
    for i in range(1, x.shape[1]):
        x[:, i] = 0.9 * x[:, i - 1] + rng.normal(size=2)
    # AR(1) with phi = 0.9 has an integrated time of about 19
    assert ess_mean(x) < x.size / 10


def test_mcse_of_iid_draws():
    x = np.random.default_rng(8).normal(0, 2.0, size=(4, 1000))
    assert mcse_mean(x) == pytest.approx(2.0 / np.sqrt(x.size), rel=0.15)


def test_summary_table():
    rng = np.random.default_rng(9)
    draws = rng.normal(size=(2, 500, 2))
    table = summarize(draws, ["a", "b"], {"exp_a": np.exp(draws[:, :, 0])})
    assert list(table.index) == ["a", "b", "exp_a"]
    assert table.loc["a", "mean"] == pytest.approx(draws[:, :, 0].mean())
    assert table.loc["b", "q5"] < table.loc["b", "mean"] < table.loc["b", "q95"]
    assert (table["rhat"] < 1.05).all()


def test_summary_diagnostics_match_the_single_parameter_functions():
    rng = np.random.default_rng(10)
    draws = np.cumsum(rng.normal(size=(3, 400, 1)), axis=1) * 0.05 + rng.normal(size=(3, 400, 1))
    row = summarize(draws, ["a"]).loc["a"]
    x = draws[:, :, 0]
    assert row["rhat"] == pytest.approx(split_rhat(x), rel=1e-9)
    assert row["ess_bulk"] == pytest.approx(ess_bulk(x), rel=1e-9)
    assert row["mcse_mean"] == pytest.approx(mcse_mean(x), rel=1e-9)


def test_summary_masks_constant_quantities():
    draws = np.random.default_rng(11).normal(size=(2, 100, 2))
    draws[:, :, 1] = 2.0
    table = summarize(draws, ["a", "b"])
    assert np.isfinite(table.loc["a", "rhat"])
    assert table.loc["b", ["rhat", "ess_bulk", "mcse_mean"]].isna().all()
    assert table.loc["b", "mean"] == 2.0
