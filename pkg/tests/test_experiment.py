import hashlib
import json

import numpy as np
import pytest

from bayesunc import cli
from bayesunc.evaluation import CalibrationCurve, PRCurve, read_curve_csv
from bayesunc.experiment import (
    REGRESSION_COLUMNS,
    ConfigError,
    build_datasets,
    emit_table,
    network_spec,
    resolve_config,
    run_experiment,
    train_config,
)
from bayesunc.network import init_network, load_checkpoint
from bayesunc.plotting import emit_plot, render_svg

TINY = {"epochs": 2, "n_train": 120, "n_test": 60, "hidden": [16], "mc_samples": 5, "noise_samples": 5}


def _run(tmp_path, name="run", **kw):
    return run_experiment({**TINY, **kw}, out_dir=tmp_path / name)


class TestConfig:
    def test_unknown_field_named(self):
        with pytest.raises(ConfigError, match="colour"):
            resolve_config({"colour": "red"})

    def test_bad_variant(self):
        with pytest.raises(ConfigError, match="model_variant"):
            resolve_config({"model_variant": "ensemble"})

    def test_mc_variant_needs_dropout(self):
        with pytest.raises(ConfigError, match="dropout_p"):
            resolve_config({"model_variant": "epistemic", "dropout_p": 0.0})
        resolve_config({"model_variant": "aleatoric", "dropout_p": 0.0})

    def test_seed_must_be_explicit_int(self):
        with pytest.raises(ConfigError, match="data_seed"):
            resolve_config({"data_seed": None})

    def test_variant_wiring(self):
        losses = {}
        for v in ("baseline", "aleatoric", "epistemic", "combined"):
            cfg = resolve_config({"model_variant": v})
            losses[v] = (network_spec(cfg).head, train_config(cfg).loss)
        assert losses["baseline"] == ("regression_plain", "fixed_sigma")
        assert losses["aleatoric"] == ("regression_hetero", "gaussian_hetero")
        assert losses["epistemic"] == ("regression_plain", "fixed_sigma")
        assert losses["combined"] == ("regression_hetero", "gaussian_hetero")
        cfg = resolve_config({"task": "classification", "model_variant": "combined"})
        assert train_config(cfg).loss == "stochastic_softmax"
        cfg = resolve_config({"model_variant": "aleatoric", "likelihood": "laplace"})
        assert train_config(cfg).loss == "laplace_hetero"

    def test_variants_share_data_and_init(self):
        a = resolve_config({"model_variant": "baseline", "corruption": 0.2})
        b = resolve_config({"model_variant": "combined", "corruption": 0.2})
        np.testing.assert_array_equal(build_datasets(a)[0].targets, build_datasets(b)[0].targets)
        pa, pb = init_network(network_spec(a), 0), init_network(network_spec(b), 0)
        for name in pa.names():
            np.testing.assert_array_equal(pa[name], pb[name])


class TestRun:
    def test_artifacts_carry_hash(self, tmp_path):
        art = _run(tmp_path, ood=True)
        text = (art.out_dir / "config.json").read_text()
        digest = hashlib.sha256(text.encode()).hexdigest()
        assert art.config_hash == digest
        for path in art.files:
            if path.suffix in (".csv", ".svg") and path.name != "metrics.csv":
                assert digest in path.read_text().splitlines()[0 if path.suffix == ".csv" else 1]
        assert all(r["config_hash"] == digest for r in art.metrics)
        _, _, extra = load_checkpoint(art.out_dir / "checkpoint.bin")
        assert extra["config_sha256"] == digest
        assert not list(art.out_dir.glob("*.tmp"))

    def test_metrics_rows(self, tmp_path):
        art = _run(tmp_path, ood=True)
        lines = (art.out_dir / "metrics.csv").read_text().splitlines()
        assert lines[0].split(",") == REGRESSION_COLUMNS
        assert [r["test_set"] for r in art.metrics] == ["id", "ood"]

    def test_deterministic(self, tmp_path):
        names = ("metrics.csv", "predictions_id.csv", "calibration_id.svg", "checkpoint.bin", "config.json")
        art = _run(tmp_path, model_variant="combined")
        first = {n: (art.out_dir / n).read_bytes() for n in names}
        art = _run(tmp_path, model_variant="combined")
        assert first == {n: (art.out_dir / n).read_bytes() for n in names}

    def test_baseline_has_no_uncertainty(self, tmp_path):
        row = _run(tmp_path, model_variant="baseline").metrics[0]
        assert row["epistemic"] is None and row["aleatoric"] is None

    def test_classification(self, tmp_path):
        art = _run(tmp_path, task="classification", model_variant="combined")
        row = art.metrics[0]
        assert 0 <= row["accuracy"] <= 1 and row["aleatoric"] >= 0 and row["epistemic"] >= 0
        assert isinstance(read_curve_csv(art.out_dir / "calibration_id.csv"), CalibrationCurve)

    def test_self_check_passes(self, tmp_path):
        run_experiment({**TINY, "model_variant": "combined"}, out_dir=tmp_path, self_check=True)


class TestTable:
    def test_single_run(self, tmp_path):
        art = _run(tmp_path)
        path = emit_table([art], ["train_fraction", "test_set", "rms", "aleatoric", "epistemic"], tmp_path / "t.csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 2 and lines[0] == "train_fraction,test_set,rms,aleatoric,epistemic"

    def test_six_significant_digits(self, tmp_path):
        art = _run(tmp_path)
        path = emit_table([art], ["rms"], tmp_path / "t.csv")
        assert path.read_text().splitlines()[1] == f"{art.metrics[0]['rms']:.6g}"

    def test_missing_columns_listed(self, tmp_path):
        art = _run(tmp_path)
        with pytest.raises(KeyError, match="iou"):
            emit_table([art], ["rms", "iou"], tmp_path / "t.csv")

    def test_mixed_tasks_rejected(self, tmp_path):
        a = _run(tmp_path, "a")
        b = _run(tmp_path, "b", task="classification", model_variant="baseline")
        with pytest.raises(ValueError, match="mixed"):
            emit_table([a, b], ["task"], tmp_path / "t.csv")


class TestPlot:
    cal = CalibrationCurve(np.array([0.2, 0.5, 0.8]), np.array([0.25, 0.5, 0.7]), np.array([3, 4, 5]))

    def test_deterministic(self, tmp_path):
        a = emit_plot(self.cal, "calibration", tmp_path / "a.svg")
        b = emit_plot(self.cal, "calibration", tmp_path / "b.svg")
        assert a.read_bytes() == b.read_bytes()

    def test_reference_diagonal(self):
        assert 'id="reference-diagonal"' in render_svg(self.cal, "calibration")
        pr = PRCurve(np.array([0.5, 1.0]), np.array([0.2, 0.3]), np.array([1, 2]), "regression")
        assert "reference-diagonal" not in render_svg(pr, "pr")

    def test_empty_curve(self):
        with pytest.raises(ValueError):
            render_svg(CalibrationCurve(np.array([]), np.array([]), np.array([])), "calibration")


class TestCli:
    def _config(self, tmp_path, **kw):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**TINY, "output_dir": str(tmp_path / "out"), **kw}))
        return path

    def test_run_and_eval_and_plot(self, tmp_path, capsys):
        assert cli.main(["run", str(self._config(tmp_path))]) == 0
        assert cli.main(["eval", str(tmp_path / "out" / "predictions_id.csv"), "--out", str(tmp_path / "ev")]) == 0
        assert "rms," in capsys.readouterr().out
        assert cli.main(["plot", str(tmp_path / "ev" / "calibration.csv")]) == 0
        assert (tmp_path / "ev" / "calibration.svg").exists()

    def test_config_error_exit_code(self, tmp_path, capsys):
        assert cli.main(["run", str(self._config(tmp_path, bogus=1))]) == 1
        assert "bogus" in capsys.readouterr().err
        assert cli.main(["run", str(tmp_path / "missing.json")]) == 1

    def test_numerical_failure_exit_code(self, tmp_path):
        assert cli.main(["run", str(self._config(tmp_path, lr=1e30, epochs=3))]) == 2

    def test_sweep(self, tmp_path):
        for v in ("baseline", "combined"):
            (tmp_path / f"{v}.json").write_text(json.dumps({**TINY, "model_variant": v}))
        assert cli.main(["sweep", str(tmp_path)]) == 0
        lines = (tmp_path / "table_regression.csv").read_text().splitlines()
        assert len(lines) == 3
