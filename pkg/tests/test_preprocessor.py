import math

import numpy as np
import pandas as pd
import pytest

from src.config import ImputationGrouping, ModelKind, PipelinePolicy, TimeGranularity
from src.exceptions import DimensionError, PipelineError
from src.preprocessor import (
    FILTER_RULES, Standardizer, WellPreprocessor, build_design, filter_wells, group_averages,
    impute_zeros, intensities, log_transform, standardize,
)
from tests.conftest import make_wells


def test_filter_counts_each_rule():
    df = make_wells([
        ("ok", "2015-01-01", "DN87au", 0, 0, 0, 100),
        ("vert", "2015-01-01", "DN87au", 10, 1, 1, 100, "vertical"),
        ("oil", "2015-01-01", "DN87au", -1, 1, 1, 100),
        ("lat", "2015-01-01", "DN87au", 10, 1, 1, 0),
        ("both", "2015-01-01", "DN87au", 10, -5, -5, -1, "other"),
    ])
    kept, counts = filter_wells(df)
    assert kept["well_id"].tolist() == ["ok"]
    assert counts == {
        "not_horizontal": 2, "negative_oil": 1, "negative_water": 1,
        "negative_sand": 1, "nonpositive_lateral": 2, "rejected_total": 4,
    }


def test_filter_empty_input():
    kept, counts = filter_wells(make_wells([]))
    assert kept.empty
    assert set(counts) == set(FILTER_RULES) | {"rejected_total"}
    assert not any(counts.values())


def test_impute_uses_positive_block_mean():
    df = make_wells([
        ("a", "2015-01-01", "DN87au", 0, 1, 1, 1),
        ("b", "2015-01-01", "DN87cm", 10, 1, 1, 1),
        ("c", "2015-01-01", "DN87cq", 20, 1, 1, 1),
        ("d", "2015-01-01", "DN97aa", 70, 1, 1, 1),
    ])
    out = impute_zeros(df, ImputationGrouping.PREFIX4)
    assert out["oil"].tolist() == [15.0, 10.0, 20.0, 70.0]


def test_impute_falls_back_to_global_mean():
    df = make_wells([
        ("a", "2015-01-01", "DN87au", 0, 1, 1, 1),
        ("b", "2015-01-01", "DN97aa", 4, 1, 1, 1),
        ("c", "2015-01-01", "DN97ab", 10, 1, 1, 1),
    ])
    assert impute_zeros(df)["oil"].tolist()[0] == 7.0


def test_impute_full_block_grouping():
    df = make_wells([
        ("a", "2015-01-01", "DN87au", 0, 1, 1, 1),
        ("b", "2015-01-01", "DN87au", 2, 1, 1, 1),
        ("c", "2015-01-01", "DN87cm", 100, 1, 1, 1),
    ])
    assert impute_zeros(df, "full6")["oil"].tolist()[0] == 2.0
    assert impute_zeros(df, "prefix4")["oil"].tolist()[0] == 51.0


def test_impute_without_zeros_is_a_no_op(random_wells):
    pd.testing.assert_frame_equal(impute_zeros(random_wells), random_wells)


def test_impute_all_zero_variable_is_an_error():
    df = make_wells([
        ("a", "2015-01-01", "DN87au", 5, 0, 1, 1),
        ("b", "2015-01-01", "DN87cm", 6, 0, 1, 1),
    ])
    with pytest.raises(PipelineError, match="water"):
        impute_zeros(df)


def test_impute_leaves_nonzero_values_untouched():
    rng = np.random.default_rng(0)
    values = rng.lognormal(size=40)
    values[::5] = 0
    df = make_wells([(f"w{i}", "2015-01-01", ["DN87au", "DN97aa"][i % 2], v, 1, 1, 1)
                     for i, v in enumerate(values)])
    out = impute_zeros(df)["oil"].to_numpy()
    nonzero = values != 0
    np.testing.assert_array_equal(out[nonzero], values[nonzero])
    assert (out > 0).all()


def test_log_transform():
    df = make_wells([("a", "2015-01-01", "DN87au", 1, math.e, 1, 10)])
    out = log_transform(df)
    assert out.loc[0, "oil"] == 0.0
    assert out.loc[0, "water"] == pytest.approx(1.0)


def test_log_transform_rejects_non_positive():
    df = make_wells([("a", "2015-01-01", "DN87au", 0, 1, 1, 1)])
    with pytest.raises(PipelineError, match="oil"):
        log_transform(df)


def test_intensities():
    assert intensities(2, 3, 2) == (2.5, 1.0, 1.5)
    assert intensities(0, 0, 5) == (0.0, 0.0, 0.0)
    # logged lateral of exactly zero
    assert intensities(0.7, 1.2, math.log(1.0)) == (0.0, 0.0, 0.0)


def test_standardize_two_points():
    z, mean, sd = standardize([0, 2], 2)
    np.testing.assert_allclose(z, [-0.35355339059327373, 0.35355339059327373])
    assert mean == 1.0
    assert sd == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("k", [1, 2])
def test_standardize_moments(k):
    x = np.random.default_rng(k).gamma(2.0, 50.0, size=500)
    z, mean, sd = standardize(x, k)
    assert abs(z.mean()) <= 1e-12
    assert np.std(z, ddof=1) == pytest.approx(1 / k, abs=1e-12)
    np.testing.assert_allclose(Standardizer(mean, sd, k).invert(z), x, rtol=1e-10)


def test_standardize_constant_is_an_error():
    with pytest.raises(PipelineError):
        standardize([3.0, 3.0, 3.0], 2)


def test_group_averages():
    np.testing.assert_array_equal(group_averages([1, 2, 3], [0, 0, 1], 2), [1.5, 3.0])
    out = group_averages([1, 3], [0, 0], 2)
    assert out[0] == 2.0 and np.isnan(out[1])
    np.testing.assert_array_equal(group_averages([4, 5], [1, 0], 2), [5.0, 4.0])


def test_group_averages_checks_indices():
    with pytest.raises(DimensionError):
        group_averages([1, 2], [0, 2], 2)
    with pytest.raises(PipelineError):
        group_averages([1, 3], [0, 0], 2, allow_empty=False)


def test_build_design_counts_kind_a():
    df = make_wells([
        ("a", "2015-01-01", "DN87cm", 10, 1, 1, 10),
        ("b", "2015-02-01", "DN87au", 20, 2, 1, 20),
        ("c", "2015-03-01", "DN87cm", 30, 4, 1, 15),
    ])
    data = build_design(df, PipelinePolicy.for_kind("A"), "A")
    assert (data.n_wells, data.n_blocks, data.n_times) == (3, 2, 1)
    assert data.block_codes == ["DN87au", "DN87cm"]
    assert data.well_ids == ["b", "a", "c"]
    assert data.w is not None and data.e is None and data.ew is None


def test_build_design_needs_two_wells():
    df = make_wells([("a", "2015-01-01", "DN87cm", 10, 1, 1, 10)])
    with pytest.raises(PipelineError):
        build_design(df, PipelinePolicy.for_kind("A"), "A")


def test_time_kinds_need_two_periods():
    df = make_wells([
        ("a", "2015-01-01", "DN87cm", 10, 1, 1, 10),
        ("b", "2015-06-01", "DN87au", 20, 2, 1, 20),
    ])
    with pytest.raises(PipelineError, match="two periods"):
        build_design(df, PipelinePolicy.for_kind("B"), "B")
    monthly = PipelinePolicy.for_kind("B", time_granularity=TimeGranularity.YEAR_MONTH)
    assert build_design(df, monthly, "B").time_labels == ["2015-01", "2015-06"]


def test_configured_period_range_keeps_empty_years(random_wells):
    policy = PipelinePolicy.for_kind("B", first_period="2014", last_period="2018")
    data = build_design(random_wells, policy, "B")
    assert data.time_labels == ["2014", "2015", "2016", "2017", "2018"]
    assert data.n_per_time.tolist() == [0, 20, 20, 20, 0]


def test_wells_outside_configured_range_are_an_error(random_wells):
    policy = PipelinePolicy.for_kind("B", first_period="2016")
    with pytest.raises(PipelineError, match="2015"):
        build_design(random_wells, policy, "B")


@pytest.mark.parametrize("kind", ["A", "B", "C"])
def test_prepared_dataset_invariants(kind, random_wells):
    preprocessor = WellPreprocessor(kind)
    data = preprocessor.run(random_wells)
    k = preprocessor.policy.scale_k

    assert data.n_per_block.sum() == data.n_wells == data.n_per_time.sum()
    assert data.block_of.min() >= 0 and data.block_of.max() < data.n_blocks
    assert data.time_of.min() >= 0 and data.time_of.max() < data.n_times

    vectors = {"A": ["y", "l", "w"], "B": ["y", "l", "e"], "C": ["y", "l", "ew", "es"]}[kind]
    for name in vectors:
        z = getattr(data, name)
        assert abs(z.mean()) <= 1e-12
        assert np.std(z, ddof=1) == pytest.approx(1 / k, abs=1e-12)

    averages = {"A": [("w", "w_bar_b", data.block_of)],
                "B": [("e", "e_bar_b", data.block_of)],
                "C": [("ew", "ew_bar_b", data.block_of), ("es", "es_bar_b", data.block_of),
                      ("ew", "ew_bar_t", data.time_of), ("es", "es_bar_t", data.time_of)]}[kind]
    for values, average, index in averages:
        sums = np.bincount(index, weights=getattr(data, values))
        counts = np.bincount(index)
        assert np.all(np.abs(getattr(data, average) * counts - sums) <= 1e-9 * counts)


def test_same_wells_in_any_order_give_the_same_dataset(random_wells):
    first = WellPreprocessor("B").run(random_wells)
    second = WellPreprocessor("B").run(random_wells.iloc[::-1].reset_index(drop=True))
    assert first.to_dict() == second.to_dict()


def test_kind_c_pipeline_is_positive_before_logs(random_wells):
    wells = random_wells.copy()
    wells.loc[[0, 7, 13], "water"] = 0.0
    wells.loc[[2, 9], "sand"] = 0.0
    preprocessor = WellPreprocessor("C")
    frame = preprocessor.prepare_frame(wells)
    assert np.isfinite(frame[["oil", "water", "sand", "lateral"]].to_numpy()).all()
    report = preprocessor.get_quality_report()
    assert report["zeros"]["water"] == 3
    assert report["imputed"]["sand"] == 2


def test_kind_c_requires_logs():
    with pytest.raises(ValueError):
        WellPreprocessor("C", PipelinePolicy.for_kind("C", log_transform=False))


def test_quality_report(random_wells):
    wells = random_wells.copy()
    wells.loc[0, "well_type"] = "vertical"
    wells.loc[1, "lateral"] = 0.0
    preprocessor = WellPreprocessor(ModelKind.B)
    data = preprocessor.run(wells)
    report = preprocessor.get_quality_report()
    assert report["initial_rows"] == 60
    assert report["final_rows"] == data.n_wells == 58
    assert report["rejections"]["rejected_total"] == 2
    assert report["n_blocks"] == 6 and report["n_times"] == 3


def test_outcome_round_trip_to_barrels(random_wells):
    for kind in ("B", "C"):
        data = WellPreprocessor(kind).run(random_wells)
        expected = random_wells.set_index("well_id").loc[data.well_ids, "oil"].to_numpy()
        np.testing.assert_allclose(data.outcome_original(), expected, rtol=1e-10)
