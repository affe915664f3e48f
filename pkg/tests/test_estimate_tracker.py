import math

import numpy as np
import pytest

from utils.estimate_tracker import Estimate, EstimateTracker


def test_sample_mean_and_standard_error():
    tracker = EstimateTracker()
    tracker.update_samples("poof", [1, 0, 0])
    tracker.update_samples("poof", np.array([1.0, 1.0]))
    values = np.array([1, 0, 0, 1, 1], dtype=float)
    estimate = tracker.get_estimate("poof")
    assert estimate.mean == pytest.approx(0.6)
    assert estimate.se == pytest.approx(np.std(values, ddof=1) / math.sqrt(5))
    assert tracker.sample_count("poof") == 5


def test_derived_estimates_follow_samples():
    tracker = EstimateTracker()
    tracker.set_estimate("off", 2.0, 0.1)
    tracker.update_samples("e_in", [0.8, 0.9])
    assert list(tracker.get_estimates()) == ["e_in", "off"]
    assert tracker.get_estimate("off") == Estimate(2.0, 0.1)


def test_missing_and_single_samples():
    tracker = EstimateTracker()
    assert tracker.get_estimate("poof") is None
    tracker.update_samples("poof", [1.0])
    assert tracker.get_estimate("poof").se == 0.0


def test_z_score():
    assert Estimate(1.2, 0.1).z_score(1.0) == pytest.approx(2.0)
    assert Estimate(1.0, 0.0).z_score(1.0) == 0.0
    assert Estimate(0.5, 0.0).z_score(1.0) == -math.inf


def test_display(capsys):
    tracker = EstimateTracker()
    tracker.update_samples("poof", [1.0, 0.0])
    tracker.display_estimates()
    assert "poof" in capsys.readouterr().err
