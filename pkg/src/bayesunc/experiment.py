"""Experiment runner: one flat JSON config in, a directory of artifacts out.

Variants differ only in loss and inference wiring:

============  =====================================  ===================
variant       training loss                          inference
============  =====================================  ===================
baseline      fixed-σ Gaussian / softmax             deterministic pass
aleatoric     heteroscedastic / logit-noise softmax  deterministic pass
epistemic     fixed-σ Gaussian / softmax             MC dropout
combined      heteroscedastic / logit-noise softmax  MC dropout
============  =====================================  ===================

All variants train with dropout active. Shared seeds give identical data,
masks and initial trunk weights across variants.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import evaluation as ev
from .network import NetworkSpec, save_checkpoint
from .plotting import emit_plot
from .predict import (
    PredictiveSamples,
    aleatoric_classification_entropy,
    decompose_regression,
    epistemic_logit_variance,
    map_predict,
    mc_dropout_predict,
    mean_softmax,
    predictive_entropy,
    write_classification_dump,
    write_regression_dump,
)
from .synthdata import (
    ClassificationConfig,
    Dataset,
    RegressionConfig,
    corrupt_labels,
    gen_hetero_regression,
    gen_toy_classification,
    ood_shift,
    subset,
)
from .training import TrainConfig, fit

VARIANTS = ("baseline", "aleatoric", "epistemic", "combined")

DEFAULTS: dict[str, Any] = {
    "task": "regression",
    "model_variant": "combined",
    # network
    "hidden": [64, 64],
    "dropout_p": 0.1,
    "input_dropout": False,
    "likelihood": "gaussian",
    "s_bias_init": -2.0,
    "tie_sigma": False,
    # training
    "epochs": 100,
    "batch_size": 64,
    "lr": 1e-3,
    "weight_decay": 1.0,
    "seed": 0,
    "loss_samples": 10,
    # data
    "n_train": 2000,
    "n_test": 2000,
    "data_seed": 0,
    "test_seed": 1,
    "corruption": 0.0,
    "corruption_seed": 0,
    "train_fraction": 1.0,
    "subset_seed": 0,
    "ood": False,
    "ood_shift": 1.0,
    "n_ood": 2000,
    # regression generator
    "dim": 1,
    "x_low": -1.0,
    "x_high": 1.0,
    "frequency": 1.0,
    "amplitude": 1.0,
    "noise_base": 0.05,
    "noise_slope": 0.45,
    # classification generator
    "num_classes": 4,
    "radius": 2.0,
    "cluster_std": 1.0,
    "rho_base": 0.0,
    "rho_boundary": 0.5,
    "rho_max": 0.9,
    # inference and evaluation
    "mc_samples": 50,
    "inference_seed": 0,
    "noise_samples": 100,
    "calibration_bins": 10,
    "calibration_levels": list(ev.DEFAULT_LEVELS),
    "percentiles": list(ev.DEFAULT_PERCENTILES),
    "save_predictions": True,
    "save_plots": True,
    "output_dir": "runs/default",
}

REGRESSION_COLUMNS = [
    "config_hash", "task", "variant", "train_fraction", "test_set", "n_test",
    "rms", "mae", "aleatoric", "epistemic", "total", "sigma_corr", "calibration_mse",
]
CLASSIFICATION_COLUMNS = [
    "config_hash", "task", "variant", "train_fraction", "test_set", "n_test",
    "accuracy", "iou", "accuracy_observed", "aleatoric", "epistemic", "entropy", "calibration_mse",
]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


class AcceptanceViolation(RuntimeError):
    """An invariant check failed in self-check mode."""


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def resolve_config(raw: dict) -> dict:
    """Merge ``raw`` onto the defaults and validate; returns a new dict."""
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    cfg = {**DEFAULTS, **raw}

    def bad(key, why):
        raise ConfigError(f"{key}: {why} (got {cfg[key]!r})")

    if cfg["task"] not in ("regression", "classification"):
        bad("task", "must be 'regression' or 'classification'")
    if cfg["model_variant"] not in VARIANTS:
        bad("model_variant", f"must be one of {VARIANTS}")
    if cfg["likelihood"] not in ("gaussian", "laplace"):
        bad("likelihood", "must be 'gaussian' or 'laplace'")
    if not isinstance(cfg["hidden"], list) or not cfg["hidden"] or any(
        not isinstance(w, int) or w < 1 for w in cfg["hidden"]
    ):
        bad("hidden", "must be a non-empty list of positive integers")
    if not 0.0 <= cfg["dropout_p"] < 1.0:
        bad("dropout_p", "must lie in [0, 1)")
    if cfg["model_variant"] in ("epistemic", "combined") and cfg["dropout_p"] <= 0:
        bad("dropout_p", f"variant {cfg['model_variant']!r} needs dropout_p > 0")
    for key in ("epochs", "batch_size", "n_train", "n_test", "n_ood", "mc_samples",
                "noise_samples", "loss_samples", "calibration_bins", "dim", "num_classes"):
        if not isinstance(cfg[key], int) or cfg[key] < (0 if key == "epochs" else 1):
            bad(key, "must be a positive integer")
    if cfg["task"] == "classification" and cfg["num_classes"] < 2:
        bad("num_classes", "must be >= 2")
    if cfg["model_variant"] in ("epistemic", "combined") and cfg["task"] == "classification" and cfg["mc_samples"] < 2:
        bad("mc_samples", "MC dropout classification needs at least 2 samples")
    for key in ("seed", "data_seed", "test_seed", "corruption_seed", "subset_seed", "inference_seed"):
        if not isinstance(cfg[key], int) or cfg[key] < 0:
            bad(key, "seeds must be explicit non-negative integers")
    if not 0.0 <= cfg["corruption"] <= 1.0:
        bad("corruption", "must lie in [0, 1]")
    if not 0.0 < cfg["train_fraction"] <= 1.0:
        bad("train_fraction", "must lie in (0, 1]")
    if cfg["ood"] and cfg["ood_shift"] == 0:
        bad("ood_shift", "must be non-zero")
    if cfg["lr"] <= 0:
        bad("lr", "must be positive")
    if cfg["weight_decay"] < 0:
        bad("weight_decay", "must be non-negative")
    try:
        _data_config(cfg).validate()
    except ValueError as err:
        raise ConfigError(f"data generator: {err}") from None
    return cfg


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def load_config(path) -> dict:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return raw


def _data_config(cfg: dict):
    if cfg["task"] == "regression":
        keys = ("dim", "x_low", "x_high", "frequency", "amplitude", "noise_base", "noise_slope")
        return RegressionConfig(**{k: cfg[k] for k in keys})
    keys = ("num_classes", "radius", "cluster_std", "rho_base", "rho_boundary", "rho_max")
    return ClassificationConfig(**{k: cfg[k] for k in keys})


def network_spec(cfg: dict) -> NetworkSpec:
    classification = cfg["task"] == "classification"
    hetero = cfg["model_variant"] in ("aleatoric", "combined")
    head = ("classification" if classification else "regression") + ("_hetero" if hetero else "_plain")
    in_dim = 2 if classification else cfg["dim"]
    out_dim = cfg["num_classes"] if classification else 1
    return NetworkSpec(
        (in_dim, *cfg["hidden"], out_dim),
        dropout_p=cfg["dropout_p"],
        head=head,
        input_dropout=cfg["input_dropout"],
        s_bias_init=cfg["s_bias_init"],
        tie_sigma=cfg["tie_sigma"],
    )


def train_config(cfg: dict) -> TrainConfig:
    hetero = cfg["model_variant"] in ("aleatoric", "combined")
    if cfg["task"] == "classification":
        loss = "stochastic_softmax" if hetero else "softmax"
    elif hetero:
        loss = "laplace_hetero" if cfg["likelihood"] == "laplace" else "gaussian_hetero"
    else:
        loss = "fixed_sigma"
    return TrainConfig(
        loss=loss, epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        weight_decay=cfg["weight_decay"], seed=cfg["seed"], sigma=1.0, loss_samples=cfg["loss_samples"],
    )


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def build_datasets(cfg: dict) -> tuple[Dataset, dict[str, Dataset]]:
    """Training set plus named test sets (``"id"`` and, with ``ood``, ``"ood"``)."""
    dcfg = _data_config(cfg)
    gen = gen_hetero_regression if cfg["task"] == "regression" else gen_toy_classification
    train = gen(cfg["n_train"], cfg["data_seed"], dcfg)
    if cfg["corruption"] > 0:
        train = corrupt_labels(train, cfg["corruption"], cfg["corruption_seed"])
    if cfg["train_fraction"] < 1.0:
        train = subset(train, cfg["train_fraction"], cfg["subset_seed"])
    tests = {"id": gen(cfg["n_test"], cfg["test_seed"], dcfg)}
    if cfg["ood"]:
        tests["ood"] = ood_shift(dcfg, cfg["ood_shift"], cfg["n_ood"], cfg["test_seed"])
    return train, tests


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


@dataclass
class RunArtifact:
    task: str
    variant: str
    out_dir: Path
    config: dict
    config_hash: str
    metrics: list[dict]
    files: list[Path] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    curves: dict[str, Any] = field(default_factory=dict)
    decompositions: dict[str, Any] = field(default_factory=dict)


def _uses_mc(cfg: dict) -> bool:
    return cfg["model_variant"] in ("epistemic", "combined")


def _infer(params, spec, cfg, x) -> PredictiveSamples:
    lik = cfg["likelihood"]
    if _uses_mc(cfg):
        return mc_dropout_predict(params, spec, x, cfg["mc_samples"], cfg["inference_seed"], likelihood=lik)
    return map_predict(params, spec, x, likelihood=lik)


def _regression_eval(cfg, samples, test: Dataset, self_check: bool):
    dec = decompose_regression(samples)
    if self_check:
        if not np.array_equal(dec.total_var, dec.epistemic_var + dec.aleatoric_var):
            raise AcceptanceViolation("total variance differs from epistemic + aleatoric")
        if np.any(dec.epistemic_var < 0) or np.any(dec.aleatoric_var < 0):
            raise AcceptanceViolation("negative variance in decomposition")
    resid = dec.predictive_mean - test.targets
    row = {
        "rms": ev.rmse(dec.predictive_mean, test.targets),
        "mae": float(np.mean(np.abs(resid))),
        "aleatoric": float(dec.aleatoric_var.mean()) if samples.s is not None else None,
        "epistemic": float(dec.epistemic_var.mean()) if _uses_mc(cfg) else None,
        "total": float(dec.total_var.mean()) if np.all(dec.total_var > 0) else None,
        "sigma_corr": None,
        "calibration_mse": None,
    }
    if samples.s is not None and test.ground_truth_sigma is not None:
        pred_sd = np.sqrt(dec.aleatoric_var.ravel())
        true_sd = np.ravel(test.ground_truth_sigma)
        if pred_sd.std() > 0 and true_sd.std() > 0:
            row["sigma_corr"] = float(np.corrcoef(pred_sd, true_sd)[0, 1])
    curves = {}
    if np.all(dec.total_var > 0):
        lik = cfg["likelihood"] if samples.s is not None else "gaussian"
        cal = ev.regression_calibration(dec.predictive_mean, dec.total_var, test.targets, lik, cfg["calibration_levels"])
        row["calibration_mse"] = ev.calibration_mse(cal)
        curves["calibration"] = cal
        curves["pr"] = ev.precision_recall_uncertainty(dec.total_var, resid, cfg["percentiles"], kind="regression")
    return row, curves, dec


def _classification_eval(cfg, params, spec, samples, test: Dataset, self_check: bool):
    probs = mean_softmax(samples)
    if self_check and np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-12):
        raise AcceptanceViolation("mean softmax probabilities do not sum to 1")
    clean = test.provenance.get("clean_labels", test.targets)
    pred = probs.argmax(axis=1)
    metrics = ev.classification_metrics(pred, clean, cfg["num_classes"])
    entropy = predictive_entropy(probs)
    row = {
        "accuracy": metrics["accuracy"],
        "iou": metrics["mean_iou"],
        "accuracy_observed": float(np.mean(pred == test.targets)),
        "aleatoric": None,
        "epistemic": None,
        "entropy": float(np.mean(entropy)),
    }
    logit_var = None
    if _uses_mc(cfg):
        logit_var = epistemic_logit_variance(samples)
        row["epistemic"] = float(logit_var.mean())
    if spec.is_hetero:
        ale = aleatoric_classification_entropy(params, spec, test.inputs, cfg["noise_samples"], cfg["inference_seed"])
        row["aleatoric"] = float(np.mean(ale))
    cal = ev.classification_calibration(probs, test.targets, cfg["calibration_bins"])
    row["calibration_mse"] = ev.calibration_mse(cal)
    curves = {
        "calibration": cal,
        "pr": ev.precision_recall_uncertainty(entropy, (pred == clean).astype(float), cfg["percentiles"]),
    }
    return row, curves, {"probs": probs, "logit_var": logit_var}


def run_experiment(raw_config: dict, out_dir=None, self_check: bool = False) -> RunArtifact:
    """Train, evaluate and write every artifact of one run.

    Deterministic: the same config always yields byte-identical CSV, JSON,
    SVG and checkpoint files (wall-clock timings go to ``timings.json`` only).
    """
    cfg = resolve_config(raw_config)
    if out_dir is not None:
        cfg["output_dir"] = str(out_dir)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    text = canonical_json(cfg)
    digest = hashlib.sha256(text.encode()).hexdigest()
    tag = f"config_sha256={digest}"
    files = [_atomic_write(out / "config.json", text)]
    timings = {}

    t0 = time.perf_counter()
    train, tests = build_datasets(cfg)
    spec = network_spec(cfg)
    timings["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    params, history = fit(spec, train, train_config(cfg), init_seed=cfg["seed"])
    timings["train"] = time.perf_counter() - t0
    ckpt = out / "checkpoint.bin"
    save_checkpoint(ckpt, params, spec, {"config_sha256": digest, "steps": history.steps})
    files.append(ckpt)

    rows, all_curves, decs = [], {}, {}
    for name, test in tests.items():
        t0 = time.perf_counter()
        samples = _infer(params, spec, cfg, test.inputs)
        timings[f"inference_{name}"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        if cfg["task"] == "regression":
            row, curves, dec = _regression_eval(cfg, samples, test, self_check)
            if cfg["save_predictions"]:
                files.append(out / f"predictions_{name}.csv")
                write_regression_dump(files[-1], test.targets, dec, comment=tag)
        else:
            row, curves, dec = _classification_eval(cfg, params, spec, samples, test, self_check)
            if cfg["save_predictions"]:
                files.append(out / f"predictions_{name}.csv")
                write_classification_dump(files[-1], test.targets, dec["probs"], dec["logit_var"], comment=tag)
        timings[f"evaluate_{name}"] = time.perf_counter() - t0
        for kind, curve in curves.items():
            files.append(out / f"{kind}_{name}.csv")
            ev.write_curve_csv(files[-1], curve, comment=tag)
            if cfg["save_plots"]:
                files.append(out / f"{kind}_{name}.svg")
                emit_plot(curve, kind, files[-1], title=f"{cfg['model_variant']} / {name}", comment=tag)
        rows.append({
            "config_hash": digest, "task": cfg["task"], "variant": cfg["model_variant"],
            "train_fraction": cfg["train_fraction"], "test_set": name, "n_test": len(test), **row,
        })
        all_curves[name] = curves
        decs[name] = dec

    columns = REGRESSION_COLUMNS if cfg["task"] == "regression" else CLASSIFICATION_COLUMNS
    files.append(write_table(out / "metrics.csv", rows, columns))
    _atomic_write(out / "timings.json", json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return RunArtifact(cfg["task"], cfg["model_variant"], out, cfg, digest, rows, files, timings, all_curves, decs)


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def write_table(path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    missing = sorted({c for c in columns for r in rows if c not in r})
    if missing:
        raise KeyError(f"missing columns: {', '.join(missing)}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r[c]) for c in columns])
    tmp.replace(path)
    return path


def emit_table(artifacts: Iterable[RunArtifact], columns: Sequence[str], path) -> Path:
    """One row per (run, test set) with a fixed column order; tasks may not mix."""
    artifacts = list(artifacts)
    tasks = {a.task for a in artifacts}
    if len(tasks) > 1:
        raise ValueError(f"cannot tabulate mixed tasks: {sorted(tasks)}")
    rows = [r for a in artifacts for r in a.metrics]
    return write_table(path, rows, columns)


def _atomic_write(path: Path, text: str) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
    return path
