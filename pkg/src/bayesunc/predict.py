"""MC-dropout inference and aleatoric/epistemic decomposition."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import HeadOutput, NetworkSpec, Parameters, forward, sample_mask

DEFAULT_MC_SAMPLES = 50


@dataclass(frozen=True)
class PredictiveSamples:
    """Outputs of ``T`` forward passes, stacked on axis 0.

    ``outputs`` is ``(T, n, k)``: ``ŷ_t`` for regression, logits ``f_t`` for
    classification. ``s`` holds the matching uncertainty-head outputs, or is
    ``None`` for plain heads. ``likelihood`` decides how ``s`` maps to an
    aleatoric variance for regression.
    """

    task: str
    outputs: np.ndarray
    s: np.ndarray | None
    seed: int | None
    likelihood: str = "gaussian"

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.outputs.ndim != 3 or self.outputs.shape[0] < 1:
            raise ValueError(f"outputs must be (T, n, k) with T >= 1, got {self.outputs.shape}")
        if self.s is not None and self.s.shape != self.outputs.shape:
            raise ValueError("uncertainty outputs must match prediction shapes")

    @property
    def T(self) -> int:
        return self.outputs.shape[0]

    def aleatoric_samples(self) -> np.ndarray | None:
        """Per-sample aleatoric variances ``σ̂²_t``."""
        if self.s is None:
            return None
        if self.likelihood == "laplace":
            # s = log b, Var = 2 b^2
            return 2.0 * np.exp(2.0 * self.s)
        return np.exp(self.s)


def _stack(task: str, passes: list[HeadOutput], seed, likelihood) -> PredictiveSamples:
    outputs = np.stack([p.mean for p in passes])
    s = None if passes[0].s is None else np.stack([p.s for p in passes])
    return PredictiveSamples(task, outputs, s, seed, likelihood)


def _task(spec: NetworkSpec) -> str:
    return "classification" if spec.is_classification else "regression"


def mc_dropout_predict(
    params: Parameters,
    spec: NetworkSpec,
    x: np.ndarray,
    T: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    likelihood: str = "gaussian",
) -> PredictiveSamples:
    """``T`` stochastic passes; pass ``t`` uses the mask derived from ``(seed, t)``."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    x = np.asarray(x, dtype=np.float64)
    passes = [forward(params, spec, x, sample_mask(spec, x.shape[0], seed, t)) for t in range(T)]
    return _stack(_task(spec), passes, seed, likelihood)


def map_predict(
    params: Parameters, spec: NetworkSpec, x: np.ndarray, likelihood: str = "gaussian"
) -> PredictiveSamples:
    """The deterministic pass, packaged as a single sample."""
    return _stack(_task(spec), [forward(params, spec, np.asarray(x, dtype=np.float64))], None, likelihood)


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionDecomposition:
    predictive_mean: np.ndarray
    epistemic_var: np.ndarray
    aleatoric_var: np.ndarray
    total_var: np.ndarray


def _population_variance(y: np.ndarray) -> np.ndarray:
    """Two-pass variance over axis 0, shifted by the first sample.

    The shift makes identical samples give exactly zero, which the plain
    ``mean`` can miss by an ulp.
    """
    d = y - y[0]
    return np.mean(np.square(d - d.mean(axis=0)), axis=0)


def decompose_regression(samples: PredictiveSamples) -> RegressionDecomposition:
    """Population variance of ``ŷ_t`` plus mean of ``σ̂²_t``.

    Plain heads have no aleatoric output; their aleatoric term is zero and the
    total is the epistemic term alone.
    """
    if samples.task != "regression":
        raise ValueError("decompose_regression needs regression samples")
    y = samples.outputs
    mean = y.mean(axis=0)
    epistemic = _population_variance(y)
    sig2 = samples.aleatoric_samples()
    aleatoric = np.zeros_like(mean) if sig2 is None else sig2.mean(axis=0)
    return RegressionDecomposition(mean, epistemic, aleatoric, epistemic + aleatoric)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def mean_softmax(samples: PredictiveSamples) -> np.ndarray:
    """MC estimate of the predictive class probabilities, ``(n, C)``."""
    if samples.task != "classification":
        raise ValueError("mean_softmax needs classification samples")
    return softmax(samples.outputs).mean(axis=0)


def predictive_entropy(p: np.ndarray) -> np.ndarray | float:
    """Entropy ``-Σ p log p`` along the last axis, with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("not a probability vector (negative entries or sum != 1)")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = np.clip(-terms.sum(axis=-1), 0.0, np.log(p.shape[-1]))
    return float(h) if h.ndim == 0 else h


def epistemic_logit_variance(samples: PredictiveSamples) -> np.ndarray:
    """Per-point population variance of the logits across passes, averaged over classes."""
    if samples.task != "classification":
        raise ValueError("epistemic_logit_variance needs classification samples")
    if samples.T < 2:
        raise ValueError("epistemic logit variance needs T >= 2 samples")
    return _population_variance(samples.outputs).mean(axis=-1)


def aleatoric_classification_entropy(
    params: Parameters, spec: NetworkSpec, x: np.ndarray, T_noise: int = 100, seed: int = 0
) -> np.ndarray:
    """Entropy of the logit-noise predictive at the MAP weights, per point.

    Softmax probabilities are averaged over ``T_noise`` draws of
    ``f + σ ε`` with dropout switched off, isolating the aleatoric part.
    """
    if not (spec.is_classification and spec.is_hetero):
        raise ValueError("aleatoric entropy needs a heteroscedastic classification head")
    if T_noise < 1:
        raise ValueError(f"T_noise must be >= 1, got {T_noise}")
    f, s = forward(params, spec, np.asarray(x, dtype=np.float64))
    return noisy_logit_entropy(f, np.exp(s), T_noise, seed)


def noisy_logit_entropy(f: np.ndarray, sigma: np.ndarray, T_noise: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    probs = np.zeros_like(f)
    for _ in range(T_noise):
        probs += softmax(f + sigma * rng.standard_normal(f.shape))
    probs /= T_noise
    return predictive_entropy(probs / probs.sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# prediction dumps
# ---------------------------------------------------------------------------

REGRESSION_COLUMNS = ["index", "y_true", "pred_mean", "epistemic_var", "aleatoric_var", "total_var"]
CLASSIFICATION_COLUMNS = ["index", "label", "pred_class", "max_prob", "entropy", "logit_var"]


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_rows(path, header: list[str], rows, comment: str | None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def write_regression_dump(path, y_true, dec: RegressionDecomposition, comment: str | None = None) -> None:
    """CSV with one row per scalar output (multi-output targets are flattened row-major)."""
    cols = [np.ravel(a) for a in (y_true, dec.predictive_mean, dec.epistemic_var, dec.aleatoric_var, dec.total_var)]
    rows = ([i] + [_fmt(c[i]) for c in cols] for i in range(cols[0].size))
    _write_rows(path, REGRESSION_COLUMNS, rows, comment)


def write_classification_dump(
    path, labels, probs: np.ndarray, logit_var: np.ndarray | None = None, comment: str | None = None
) -> None:
    labels = np.asarray(labels)
    n, num_classes = probs.shape
    ent = predictive_entropy(probs / probs.sum(axis=-1, keepdims=True))
    lv = np.zeros(n) if logit_var is None else np.asarray(logit_var)
    header = CLASSIFICATION_COLUMNS + [f"p{c}" for c in range(num_classes)]
    rows = (
        [i, int(labels[i]), int(np.argmax(probs[i])), _fmt(probs[i].max()), _fmt(ent[i]), _fmt(lv[i])]
        + [_fmt(v) for v in probs[i]]
        for i in range(n)
    )
    _write_rows(path, header, rows, comment)


def read_dump(path) -> tuple[str, dict[str, np.ndarray]]:
    """Read a prediction dump; returns ``(task, columns)``. Comment lines are skipped."""
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        rows = list(reader)
    if header[: len(REGRESSION_COLUMNS)] == REGRESSION_COLUMNS:
        task = "regression"
    elif header[: len(CLASSIFICATION_COLUMNS)] == CLASSIFICATION_COLUMNS:
        task = "classification"
    else:
        raise ValueError(f"{path}: unrecognised prediction dump header {header}")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    cols = {name: data[:, k] for k, name in enumerate(header)}
    for name in ("index", "label", "pred_class"):
        if name in cols:
            cols[name] = cols[name].astype(np.int64)
    return task, cols
