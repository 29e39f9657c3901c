import math

import numpy as np
import pytest

from bayesunc.evaluation import (
    CalibrationCurve,
    PRCurve,
    calibration_mse,
    central_interval_halfwidth,
    classification_calibration,
    classification_metrics,
    precision_recall_uncertainty,
    read_curve_csv,
    regression_calibration,
    regression_metrics,
    write_curve_csv,
)


class TestClassificationCalibration:
    def test_one_hot_correct(self):
        probs = np.eye(3)[[0, 1, 2, 1]]
        curve = classification_calibration(probs, np.array([0, 1, 2, 1]))
        assert len(curve) == 1
        assert curve.grid[0] == 1.0 and curve.observed[0] == 1.0

    def test_sampled_labels_are_calibrated(self):
        rng = np.random.default_rng(0)
        n = 20_000
        probs = rng.dirichlet(np.ones(3), size=n)
        labels = np.array([rng.choice(3, p=p) for p in probs])
        curve = classification_calibration(probs, labels, n_bins=10)
        # binomial 99% band around the diagonal, per bin
        band = 2.576 * np.sqrt(curve.grid * (1 - curve.grid) / curve.counts) + 1e-3
        assert np.all(np.abs(curve.observed - curve.grid) <= band)

    def test_constant_half(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 2, size=10_000)
        curve = classification_calibration(np.full((10_000, 2), 0.5), labels)
        assert len(curve) == 1
        np.testing.assert_allclose(curve.observed[0], 0.5)

    def test_validates_probabilities(self):
        with pytest.raises(ValueError):
            classification_calibration(np.array([[0.7, 0.7]]), np.array([0]))


class TestRegressionCalibration:
    def test_zero_residuals(self):
        curve = regression_calibration(np.ones(10), np.ones(10), np.ones(10))
        np.testing.assert_array_equal(curve.observed, 1.0)

    def test_exact_gaussians(self):
        rng = np.random.default_rng(2)
        n = 100_000
        mu, var = rng.normal(size=n), rng.uniform(0.1, 2.0, size=n)
        y = mu + np.sqrt(var) * rng.standard_normal(n)
        curve = regression_calibration(mu, var, y)
        np.testing.assert_allclose(curve.observed, curve.grid, atol=0.01)

    def test_overdispersed(self):
        rng = np.random.default_rng(3)
        n = 100_000
        mu, var = np.zeros(n), np.ones(n)
        y = rng.standard_normal(n)
        curve = regression_calibration(mu, 100 * var, y)
        assert np.all(curve.observed > curve.grid)

    def test_exact_laplace(self):
        rng = np.random.default_rng(4)
        b = rng.uniform(0.2, 1.0, size=100_000)
        y = rng.laplace(0.0, b)
        curve = regression_calibration(np.zeros_like(b), 2 * b**2, y, likelihood="laplace")
        np.testing.assert_allclose(curve.observed, curve.grid, atol=0.01)

    def test_halfwidth_matches_quantiles(self):
        np.testing.assert_allclose(central_interval_halfwidth(4.0, 0.9), 2 * 1.6448536269514722, rtol=1e-12)
        b = math.sqrt(0.5)
        np.testing.assert_allclose(
            central_interval_halfwidth(1.0, 0.9, "laplace"), b * math.log(10.0), rtol=1e-12
        )

    def test_non_positive_variance(self):
        with pytest.raises(ValueError):
            regression_calibration(np.zeros(2), np.array([1.0, 0.0]), np.zeros(2))


class TestCalibrationMSE:
    def test_perfect(self):
        g = np.array([0.1, 0.5, 0.9])
        assert calibration_mse(CalibrationCurve(g, g.copy(), np.ones(3))) == 0.0

    def test_single_bin(self):
        assert calibration_mse(CalibrationCurve(np.array([0.5]), np.array([1.0]), np.array([4]))) == 0.25

    def test_two_bins(self):
        curve = CalibrationCurve(np.array([0.2, 0.6]), np.array([0.3, 0.9]), np.array([10, 10]))
        np.testing.assert_allclose(calibration_mse(curve), 0.05, rtol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            calibration_mse(CalibrationCurve(np.array([]), np.array([]), np.array([])))


class TestPrecisionRecall:
    def test_all_correct(self):
        rng = np.random.default_rng(0)
        curve = precision_recall_uncertainty(rng.random(100), np.ones(100))
        np.testing.assert_array_equal(curve.value, 1.0)

    def test_oracle_uncertainty(self):
        err = np.random.default_rng(1).normal(size=1000)
        curve = precision_recall_uncertainty(np.abs(err), err, kind="regression")
        assert np.all(np.diff(curve.value) > 0)

    def test_inverse(self):
        err = np.random.default_rng(1).normal(size=1000)
        a = precision_recall_uncertainty(np.abs(err), err, kind="regression")
        b = precision_recall_uncertainty(np.abs(err), err, kind="regression", inverse=True)
        np.testing.assert_allclose(b.value, 1.0 / a.value)

    def test_independent_uncertainty_is_flat(self):
        rng = np.random.default_rng(2)
        correct = (rng.random(100_000) < 0.7).astype(float)
        curve = precision_recall_uncertainty(rng.random(100_000), correct)
        assert np.all(np.abs(curve.value - correct.mean()) <= 0.02)

    def test_ties_kept_and_nested(self):
        u = np.array([0.0, 0.0, 0.0, 1.0])
        curve = precision_recall_uncertainty(u, np.array([1.0, 1.0, 0.0, 0.0]), percentiles=[0.25, 0.5, 1.0])
        np.testing.assert_array_equal(curve.n_retained, [3, 3, 4])

    def test_small_level_keeps_one_point(self):
        curve = precision_recall_uncertainty(np.arange(5.0), np.ones(5), percentiles=[0.1, 1.0])
        assert curve.skipped == [] and curve.n_retained[0] == 1

    def test_bad_percentiles(self):
        with pytest.raises(ValueError):
            precision_recall_uncertainty(np.ones(3), np.ones(3), percentiles=[0.5, 0.2])


class TestMetrics:
    def test_perfect_regression(self):
        m = regression_metrics(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        assert m["rel"] == m["rms"] == m["log10"] == 0.0
        assert m["delta1"] == m["delta2"] == m["delta3"] == 1.0

    def test_doubled(self):
        t = np.array([1.0, 3.0, 5.0])
        m = regression_metrics(2 * t, t)
        assert m["delta1"] == m["delta2"] == m["delta3"] == 0.0
        np.testing.assert_allclose(m["rel"], 1.0)

    def test_single_pair(self):
        m = regression_metrics(np.array([1.0]), np.array([2.0]))
        np.testing.assert_allclose([m["rms"], m["rel"], m["log10"]], [1.0, 0.5, math.log10(2)])

    def test_non_positive(self):
        with pytest.raises(ValueError):
            regression_metrics(np.array([0.0]), np.array([1.0]))

    def test_perfect_classification(self):
        m = classification_metrics(np.array([0, 1, 2]), np.array([0, 1, 2]), 3)
        assert m["accuracy"] == 1.0 and m["mean_iou"] == 1.0

    def test_all_class_zero(self):
        m = classification_metrics(np.zeros(4, dtype=int), np.array([0, 1, 0, 1]), 2)
        assert m["accuracy"] == 0.5
        np.testing.assert_allclose(m["per_class_iou"], [0.5, 0.0])
        assert m["mean_iou"] == 0.25

    def test_missed_class(self):
        m = classification_metrics(np.array([0, 0, 2]), np.array([0, 1, 2]), 3)
        assert m["per_class_iou"][1] == 0.0


class TestCurveFiles:
    def test_roundtrip(self, tmp_path):
        cal = CalibrationCurve(np.array([0.1, 0.2]), np.array([0.15, 0.3]), np.array([5, 7]))
        write_curve_csv(tmp_path / "c.csv", cal, comment="config_sha256=0")
        back = read_curve_csv(tmp_path / "c.csv")
        assert isinstance(back, CalibrationCurve)
        np.testing.assert_array_equal(back.observed, cal.observed)
        pr = PRCurve(np.array([0.5, 1.0]), np.array([0.9, 0.8]), np.array([5, 10]), "classification")
        write_curve_csv(tmp_path / "p.csv", pr)
        assert isinstance(read_curve_csv(tmp_path / "p.csv"), PRCurve)

    def test_bad_header(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            read_curve_csv(tmp_path / "x.csv")
