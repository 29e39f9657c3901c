import math

import numpy as np
import pytest

from bayesunc.network import NetworkSpec, init_network
from bayesunc.predict import (
    DEFAULT_MC_SAMPLES,
    PredictiveSamples,
    aleatoric_classification_entropy,
    decompose_regression,
    epistemic_logit_variance,
    map_predict,
    mc_dropout_predict,
    mean_softmax,
    noisy_logit_entropy,
    predictive_entropy,
    read_dump,
    softmax,
    write_classification_dump,
    write_regression_dump,
)


def _reg(y, s2):
    y = np.asarray(y, dtype=float).reshape(-1, 1, 1)
    s = np.log(np.asarray(s2, dtype=float)).reshape(-1, 1, 1)
    return PredictiveSamples("regression", y, s, 0)


def _cls(f):
    return PredictiveSamples("classification", np.asarray(f, dtype=float), None, 0)


class TestMCDropout:
    spec = NetworkSpec((2, 16, 16, 1), dropout_p=0.25)

    def test_default_T(self):
        assert DEFAULT_MC_SAMPLES == 50
        out = mc_dropout_predict(init_network(self.spec, 0), self.spec, np.zeros((3, 2)))
        assert out.outputs.shape == (50, 3, 1)

    def test_p_zero_samples_identical(self):
        spec = NetworkSpec((2, 16, 16, 1), dropout_p=0.0)
        out = mc_dropout_predict(init_network(spec, 0), spec, np.ones((4, 2)), T=10)
        np.testing.assert_array_equal(out.outputs, np.broadcast_to(out.outputs[0], out.outputs.shape))

    def test_deterministic(self):
        params = init_network(self.spec, 1)
        x = np.random.default_rng(0).normal(size=(5, 2))
        a = mc_dropout_predict(params, self.spec, x, T=8, seed=3)
        b = mc_dropout_predict(params, self.spec, x, T=8, seed=3)
        np.testing.assert_array_equal(a.outputs, b.outputs)
        np.testing.assert_array_equal(a.s, b.s)

    def test_bad_T(self):
        with pytest.raises(ValueError):
            mc_dropout_predict(init_network(self.spec, 0), self.spec, np.zeros((1, 2)), T=0)

    def test_map_is_single_sample(self):
        out = map_predict(init_network(self.spec, 0), self.spec, np.zeros((3, 2)))
        assert out.T == 1


class TestRegressionDecomposition:
    def test_identical_samples(self):
        d = decompose_regression(_reg([2, 2], [0.3, 0.3]))
        np.testing.assert_allclose([d.predictive_mean.item(), d.epistemic_var.item()], [2.0, 0.0])
        np.testing.assert_allclose([d.aleatoric_var.item(), d.total_var.item()], [0.3, 0.3], rtol=1e-15)

    def test_hand_values(self):
        d = decompose_regression(_reg([1, 3], [0.5, 1.5]))
        np.testing.assert_allclose(
            [d.predictive_mean.item(), d.epistemic_var.item(), d.aleatoric_var.item(), d.total_var.item()],
            [2.0, 1.0, 1.0, 2.0],
            rtol=1e-15,
        )

    def test_single_sample(self):
        d = decompose_regression(_reg([4.0], [0.7]))
        assert d.epistemic_var.item() == 0.0
        np.testing.assert_allclose(d.total_var.item(), 0.7, rtol=1e-15)

    def test_exact_sum_and_non_negative(self):
        rng = np.random.default_rng(0)
        samples = PredictiveSamples("regression", rng.normal(size=(30, 40, 2)), rng.normal(size=(30, 40, 2)), 0)
        d = decompose_regression(samples)
        np.testing.assert_array_equal(d.total_var, d.epistemic_var + d.aleatoric_var)
        assert np.all(d.epistemic_var >= 0) and np.all(d.aleatoric_var > 0)

    def test_laplace_variance(self):
        samples = PredictiveSamples(
            "regression", np.zeros((1, 1, 1)), np.full((1, 1, 1), math.log(0.5)), 0, likelihood="laplace"
        )
        np.testing.assert_allclose(decompose_regression(samples).aleatoric_var.item(), 0.5, rtol=1e-15)

    def test_plain_head_has_no_aleatoric(self):
        d = decompose_regression(PredictiveSamples("regression", np.ones((3, 2, 1)), None, 0))
        np.testing.assert_array_equal(d.aleatoric_var, 0.0)

    def test_rejects_classification(self):
        with pytest.raises(ValueError):
            decompose_regression(_cls(np.zeros((2, 1, 3))))


class TestClassification:
    def test_mean_softmax_constant(self):
        f = np.array([0.5, -1.0, 2.0])
        out = mean_softmax(_cls(np.tile(f, (5, 1, 1))))
        np.testing.assert_allclose(out[0], softmax(f), rtol=1e-15)

    def test_mean_softmax_symmetric(self):
        out = mean_softmax(_cls([[[1.0, 3.0]], [[3.0, 1.0]]]))
        np.testing.assert_allclose(out, [[0.5, 0.5]], rtol=1e-15)

    def test_mean_softmax_recompute(self):
        f = np.random.default_rng(0).normal(size=(10, 4, 3))
        direct = sum(np.exp(ft) / np.exp(ft).sum(axis=1, keepdims=True) for ft in f) / 10
        np.testing.assert_allclose(mean_softmax(_cls(f)), direct, atol=1e-12)

    def test_entropy_values(self):
        assert predictive_entropy(np.array([0.0, 1.0, 0.0])) == 0.0
        np.testing.assert_allclose(predictive_entropy(np.full(4, 0.25)), math.log(4), rtol=1e-15)
        np.testing.assert_allclose(predictive_entropy(np.array([0.5, 0.25, 0.25])), 1.0397, atol=1e-4)

    def test_entropy_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            predictive_entropy(np.array([0.5, 0.6]))

    def test_logit_variance(self):
        np.testing.assert_array_equal(epistemic_logit_variance(_cls(np.ones((4, 3, 2)))), 0.0)
        np.testing.assert_allclose(epistemic_logit_variance(_cls([[[0.0, 0.0]], [[2.0, 2.0]]])), [1.0])

    def test_logit_variance_needs_two_samples(self):
        with pytest.raises(ValueError):
            epistemic_logit_variance(_cls(np.zeros((1, 2, 2))))

    def test_logit_variance_zero_without_dropout(self):
        spec = NetworkSpec((2, 8, 3), dropout_p=0.0, head="classification_plain")
        x = np.random.default_rng(0).normal(size=(100, 2))
        samples = mc_dropout_predict(init_network(spec, 0), spec, x, T=5)
        np.testing.assert_array_equal(epistemic_logit_variance(samples), 0.0)


class TestAleatoricEntropy:
    def test_zero_sigma(self):
        f = np.array([[1.0, -0.5, 0.2]])
        np.testing.assert_allclose(noisy_logit_entropy(f, np.zeros_like(f), 10, 0), predictive_entropy(softmax(f)))

    def test_symmetric(self):
        out = noisy_logit_entropy(np.zeros((1, 2)), np.ones((1, 2)), 5000, 0)
        np.testing.assert_allclose(out, math.log(2), atol=1e-4)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(99)
        p0 = np.mean([1.0 / (1.0 + np.exp(e[:, 1] - 1.0 - e[:, 0])) for e in [rng.standard_normal((10**6, 2))]])
        oracle = -(p0 * math.log(p0) + (1 - p0) * math.log(1 - p0))
        est = noisy_logit_entropy(np.array([[1.0, 0.0]]), np.ones((1, 2)), 20000, 1)
        assert abs(est.item() - oracle) < 2e-3

    def test_requires_hetero_classifier(self):
        spec = NetworkSpec((2, 8, 3), head="classification_plain")
        with pytest.raises(ValueError):
            aleatoric_classification_entropy(init_network(spec, 0), spec, np.zeros((1, 2)))

    def test_on_network(self):
        spec = NetworkSpec((2, 8, 3), head="classification_hetero")
        out = aleatoric_classification_entropy(init_network(spec, 0), spec, np.zeros((4, 2)), T_noise=20)
        assert out.shape == (4,) and np.all((out >= 0) & (out <= math.log(3)))


class TestDumps:
    def test_regression_roundtrip(self, tmp_path):
        d = decompose_regression(_reg([1, 3], [0.5, 1.5]))
        write_regression_dump(tmp_path / "r.csv", np.array([2.5]), d, comment="config_sha256=abc")
        assert (tmp_path / "r.csv").read_text().startswith("# config_sha256=abc\n")
        task, cols = read_dump(tmp_path / "r.csv")
        assert task == "regression"
        np.testing.assert_array_equal(cols["total_var"], [2.0])
        assert not (tmp_path / "r.csv.tmp").exists()

    def test_classification_roundtrip(self, tmp_path):
        probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
        write_classification_dump(tmp_path / "c.csv", np.array([0, 1]), probs, np.array([0.5, 0.25]))
        task, cols = read_dump(tmp_path / "c.csv")
        assert task == "classification"
        np.testing.assert_array_equal(cols["pred_class"], [0, 2])
        np.testing.assert_array_equal(cols["p2"], [0.1, 0.8])
        np.testing.assert_array_equal(cols["logit_var"], [0.5, 0.25])

    def test_unknown_header(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_dump(tmp_path / "x.csv")
