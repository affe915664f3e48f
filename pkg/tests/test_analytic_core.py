import logging
import math

import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import truncnorm

from models.analytic_core import (
    Sidedness,
    min_backtest_years,
    overfit_report,
    prob_clear,
    rho_pdf,
    rho_tail_mean,
    rho_tail_prob,
    rho_total_mass,
    sharpe_noise_scale,
    significance_z,
    truncated_normal_mean_above,
)
from models.errors import (
    DegenerateCorrelationError,
    InvalidParameterError,
    UndefinedOffError,
    UnreliableTailError,
)
from models.params import ModelParams

model_params = st.builds(
    ModelParams,
    sr_true=st.floats(-0.5, 1.0),
    theta=st.floats(-0.5, 1.5),
    f=st.floats(0.01, 0.45),
    t_years=st.floats(1.0, 100.0),
    include_sr_correction=st.booleans(),
)


class TestSharpeNoise:
    def test_with_daily_correction(self):
        params = ModelParams(sr_true=0.5, theta=0.7, f=0.05, t_years=43.3)
        sr_daily = 0.5 / math.sqrt(252)
        expected = math.sqrt((1.0 + sr_daily ** 2 / 2.0) / 43.3)
        assert sharpe_noise_scale(params).sigma_tot == pytest.approx(expected, rel=1e-12)
        assert sharpe_noise_scale(params).sigma_tot == pytest.approx(0.152007, abs=2e-6)

    def test_without_correction(self, base_params):
        assert sharpe_noise_scale(base_params).sigma_tot == pytest.approx(1.0 / math.sqrt(20.0))

    def test_slice_scale_grows_with_buckets(self, base_params):
        noise = sharpe_noise_scale(base_params)
        assert noise.slice_variance(40) == pytest.approx(40 * noise.sigma_tot ** 2)
        assert noise.sigma_slice(40) == pytest.approx(math.sqrt(40) * noise.sigma_tot)


def test_prob_clear(base_params):
    assert prob_clear(base_params) == pytest.approx(0.08986, abs=1e-4)
    assert prob_clear(base_params.replace(theta=0.4)) == pytest.approx(0.5)


class TestTruncatedNormalMean:
    def test_half_normal(self):
        assert truncated_normal_mean_above(0.0, 1.0, 0.0) == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-12)

    def test_no_truncation(self):
        assert truncated_normal_mean_above(0.3, 0.2, -math.inf) == 0.3

    def test_far_tail_stays_finite(self):
        value = truncated_normal_mean_above(0.0, 1.0, 40.0)
        assert 40.0 < value < 40.03

    def test_overflow_falls_back_with_a_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="models.analytic_core"):
            value = truncated_normal_mean_above(0.0, 1.0, 1e160)
        assert value == pytest.approx(1e160)
        assert "asymptotic tail mean" in caplog.text

    @given(st.floats(-3.0, 3.0), st.floats(0.05, 3.0), st.floats(-6.0, 6.0))
    def test_matches_scipy_truncnorm(self, mean, sd, z):
        lower = mean + z * sd
        expected = truncnorm.mean(z, math.inf, loc=mean, scale=sd)
        assert truncated_normal_mean_above(mean, sd, lower) == pytest.approx(expected, rel=1e-6, abs=1e-9)

    def test_rejects_bad_scale(self):
        with pytest.raises(InvalidParameterError):
            truncated_normal_mean_above(0.0, 0.0, 1.0)


class TestConditionedDensity:
    @settings(max_examples=100)
    @given(model_params)
    def test_normalization(self, params):
        assert abs(rho_total_mass(params) - 1.0) < 1e-8

    def test_vectorized_matches_scalar(self, base_params):
        import numpy as np

        ys = np.array([0.0, 0.36, 0.7, 1.1])
        values = rho_pdf(ys, base_params)
        assert values.shape == ys.shape
        for y, value in zip(ys, values):
            assert rho_pdf(float(y), base_params) == pytest.approx(value, rel=1e-12)

    @pytest.mark.parametrize("f", [0.0, 1.0])
    def test_degenerate_correlation(self, base_params, f):
        with pytest.raises(DegenerateCorrelationError) as excinfo:
            rho_pdf(0.36, base_params.replace(f=f))
        assert excinfo.value.flag == "--f"

    def test_poof_vanishes_as_f_shrinks(self, base_params):
        values = [rho_tail_prob(base_params.replace(f=f)) for f in (1e-2, 1e-3, 1e-4)]
        assert values[0] > values[1] > values[2] > 0.0
        assert values[2] < 0.2 * values[0]

    def test_poof_is_a_probability(self, base_params):
        assert 0.0 < rho_tail_prob(base_params) < 1.0

    def test_tail_mean_approaches_threshold_for_long_backtests(self, base_params):
        value = rho_tail_mean(base_params.replace(t_years=500.0))
        assert 0.7 < value < 0.72

    def test_tail_mean_above_threshold(self, base_params):
        assert rho_tail_mean(base_params) > base_params.theta

    def test_whole_line_mean_sits_below_tweaked_mean(self, base_params):
        # conditioning on SR < theta pulls SR_m below (1-2f) SR_t
        value = rho_tail_mean(base_params, lower=-math.inf)
        assert value < base_params.correlation * base_params.sr_true

    def test_unreliable_tail(self, base_params):
        with pytest.raises(UnreliableTailError) as excinfo:
            rho_tail_mean(base_params.replace(theta=50.0))
        assert excinfo.value.code == "unreliable-tail"
        assert "log_tail_mass" in excinfo.value.diagnostics


class TestOverfitReport:
    def test_reference_point(self, base_params):
        report = overfit_report(base_params)
        assert 1.7 <= report.off <= 2.4
        assert report.off_asymptote == pytest.approx(0.7 / 0.36)
        assert report.e_in > report.e_out

    def test_identities(self, base_params):
        report = overfit_report(base_params)
        p = report.p_clear
        assert report.poa == p + (1.0 - p) * report.poof
        assert report.e_out == pytest.approx(p * 0.4 + (1.0 - p) * 0.9 * 0.4, rel=1e-15)
        expected_in = p * report.e_sr_given_clear + (1.0 - p) * report.e_srm_given_accept
        assert report.e_in == pytest.approx(expected_in, rel=1e-15)
        assert report.off == report.e_in / report.e_out

    @given(model_params.filter(lambda p: abs(p.sr_true) > 1e-6))
    def test_poa_identity(self, params):
        report = overfit_report(params)
        assert report.poa == report.p_clear + (1.0 - report.p_clear) * report.poof
        assert report.p_clear <= report.poa <= 1.0 + 1e-15

    def test_no_tweaks_when_threshold_is_far_below(self, base_params):
        report = overfit_report(base_params.replace(theta=-1000.0))
        assert report.p_clear == 1.0
        assert report.poof is None
        assert report.e_srm_given_accept is None
        assert report.off == pytest.approx(1.0, abs=1e-12)
        assert report.poa == 1.0

    def test_converges_to_asymptote(self, base_params):
        report = overfit_report(base_params.replace(t_years=500.0))
        assert abs(report.off - 0.7 / 0.36) / (0.7 / 0.36) < 0.02

    def test_zero_true_sharpe_is_undefined(self, base_params):
        with pytest.raises(UndefinedOffError):
            overfit_report(base_params.replace(sr_true=0.0))

    def test_half_flip_warns(self, base_params, caplog):
        with caplog.at_level(logging.WARNING, logger="models.analytic_core"):
            report = overfit_report(base_params.replace(f=0.5))
        assert "denominator" in caplog.text
        assert report.off_asymptote is None
        assert report.e_out == pytest.approx(report.p_clear * 0.4)


class TestMinBacktestYears:
    def test_two_sided(self):
        assert 42.8 <= min_backtest_years(0.5, 0.999) <= 43.8

    def test_one_sided(self):
        assert min_backtest_years(0.5, 0.999, "one") == pytest.approx(38.2, abs=0.1)

    def test_z(self):
        assert significance_z(0.95, Sidedness.TWO_SIDED) == pytest.approx(1.959964, abs=1e-6)
        assert Sidedness.parse("two-sided") is Sidedness.TWO_SIDED

    @pytest.mark.parametrize("confidence", [0.0, 1.0, 1.5])
    def test_bad_confidence(self, confidence):
        with pytest.raises(InvalidParameterError):
            min_backtest_years(0.5, confidence)

    def test_zero_sharpe(self):
        with pytest.raises(InvalidParameterError):
            min_backtest_years(0.0, 0.95)

    def test_unknown_sides(self):
        with pytest.raises(InvalidParameterError):
            Sidedness.parse("three")
