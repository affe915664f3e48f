import numpy as np
import pandas as pd
import pytest

from models.errors import InvalidParameterError
from models.mc_engine import PathConfig
from tools.experiments import (
    FIGURE_PRESETS,
    GridAxis,
    GridSpec,
    McOverlay,
    derived_seed,
    grid_evaluate,
    preset,
)


def _curves(result, group, along, metric):
    frame = result.to_frame()
    assert (frame["status"] == "ok").all(), frame[frame["status"] != "ok"]
    return {key: part.sort_values(along)[metric].to_numpy(dtype=float) for key, part in frame.groupby(group)}


class TestGridAxis:
    def test_parse(self):
        axis = GridAxis.parse("t-years:2:100:21")
        assert axis.name == "t_years"
        values = axis.values()
        assert len(values) == 21
        assert values[0] == 2.0 and values[-1] == 100.0

    @pytest.mark.parametrize("text", ["days_per_year:1:2:3", "f:0.1:0.2:1", "f:0.1:0.2", "f:a:0.2:3"])
    def test_rejects(self, text):
        with pytest.raises(InvalidParameterError):
            GridAxis.parse(text)


class TestGridSpec:
    def test_f_must_stay_below_half(self, base_params):
        with pytest.raises(InvalidParameterError):
            GridSpec(fixed=base_params, axes=(GridAxis("f", 0.1, 0.5, 3),))

    def test_unknown_metric(self, base_params):
        with pytest.raises(InvalidParameterError):
            GridSpec(fixed=base_params, axes=(GridAxis("theta", 0.5, 0.8, 2),), metrics=("sharpe",))

    def test_first_axis_varies_slowest(self, base_params):
        spec = GridSpec(fixed=base_params, axes=(GridAxis("sr_true", 0.3, 0.4, 2), GridAxis("theta", 0.5, 0.7, 3)))
        points = spec.points()
        assert len(points) == 6
        assert [p["sr_true"] for p in points[:3]] == [0.3, 0.3, 0.3]
        assert [p["theta"] for p in points[:3]] == pytest.approx([0.5, 0.6, 0.7])


class TestGridEvaluate:
    def test_far_threshold_column_is_neutral(self, base_params):
        spec = GridSpec(fixed=base_params, axes=(GridAxis("sr_true", 0.3, 0.4, 2), GridAxis("theta", -1000.0, 0.7, 2)))
        frame = grid_evaluate(spec).to_frame()
        neutral = frame[frame["theta"] == -1000.0]
        assert len(neutral) == 2
        np.testing.assert_allclose(neutral["off"].to_numpy(dtype=float), 1.0, atol=1e-12)
        assert neutral["poof"].isna().all()

    def test_failed_points_keep_their_rows(self, base_params):
        spec = GridSpec(fixed=base_params, axes=(GridAxis("sr_true", 0.0, 0.4, 2),), metrics=("off",))
        rows = grid_evaluate(spec).rows
        assert [row["status"] for row in rows] == ["undefined-off", "ok"]
        assert rows[0]["off"] is None
        assert rows[0]["message"]

    def test_workers_keep_row_order(self, base_params):
        spec = GridSpec(fixed=base_params, axes=(GridAxis("t_years", 2.0, 40.0, 6),), metrics=("off", "poa"))
        assert grid_evaluate(spec, workers=1).rows == grid_evaluate(spec, workers=3).rows

    def test_metadata(self, base_params):
        spec = GridSpec(fixed=base_params, axes=(GridAxis("f", 0.02, 0.08, 2),))
        metadata = grid_evaluate(spec).metadata
        assert metadata["failed_points"] == 0
        assert metadata["seed"] is None
        assert "timestamp" in metadata and "version" in metadata

    def test_monte_carlo_overlay(self, check_params):
        config = PathConfig(model=check_params, n_buckets=40, seed=12, mode="gaussian-slice")
        spec = GridSpec(fixed=check_params, axes=(GridAxis("theta", 0.6, 0.7, 2),), metrics=("poof",),
                        mc_overlay=McOverlay(config=config, n_paths=4000))
        first = grid_evaluate(spec, workers=2)
        assert first.rows == grid_evaluate(spec).rows
        frame = first.to_frame()
        assert {"mc_poof", "mc_poof_se", "mc_p_clear"} <= set(frame.columns)
        assert first.metadata["seed"] == 12
        assert (np.abs(frame["mc_poof"] - frame["poof"]) < 5 * frame["mc_poof_se"]).all()

    def test_derived_seeds_differ(self):
        assert derived_seed(1, 0) != derived_seed(1, 1)
        assert derived_seed(1, 0) == derived_seed(1, 0)


class TestFigurePresets:
    def test_all_presets_build(self):
        assert set(FIGURE_PRESETS) == {"figure-2", "figure-3", "figure-4", "figure-5"}
        for name in FIGURE_PRESETS:
            assert preset(name).name == name

    def test_unknown_preset(self):
        with pytest.raises(InvalidParameterError):
            preset("figure-9")

    def test_off_falls_with_backtest_length(self):
        result = grid_evaluate(preset("figure-2"), workers=4)
        assert len(result.rows) == 84
        for sr_true, curve in _curves(result, "sr_true", "t_years", "off").items():
            assert np.all(np.diff(curve) <= 1e-9 * curve[:-1]), sr_true
        frame = result.to_frame()
        gap = (frame["off"] - frame["off_asymptote"]).abs() / frame["off_asymptote"]
        for _, part in frame.assign(gap=gap).groupby("sr_true"):
            part = part.sort_values("t_years")
            assert part["gap"].iloc[-1] < part["gap"].iloc[0]

    def test_poof_falls_with_backtest_length(self):
        result = grid_evaluate(preset("figure-3"), workers=4)
        for sr_true, curve in _curves(result, "sr_true", "t_years", "poof").items():
            assert np.all(np.diff(curve) <= 1e-12), sr_true

    def test_off_rises_with_flip_fraction(self):
        result = grid_evaluate(preset("figure-4"), workers=4)
        curves = _curves(result, "sr_true", "f", "off")
        for sr_true, curve in curves.items():
            assert np.all(np.diff(curve) >= -1e-9 * curve[:-1]), sr_true
        ordered = [curves[key] for key in sorted(curves)]
        for lower, higher in zip(ordered, ordered[1:]):
            assert np.all(lower > higher)

    def test_off_rises_with_threshold(self):
        frame = grid_evaluate(preset("figure-5"), workers=4).to_frame()
        for f, part in frame.groupby("f"):
            curve = part.sort_values("theta")["off"].to_numpy(dtype=float)
            assert np.all(np.diff(curve) >= -1e-9 * curve[:-1]), f

    def test_preset_overrides(self):
        spec = preset("figure-2", metrics=("poa",))
        assert spec.metrics == ("poa",)
        assert isinstance(grid_evaluate(spec).to_frame(), pd.DataFrame)
