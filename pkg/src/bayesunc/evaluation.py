"""Uncertainty-quality protocols (calibration, precision-recall) and task metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

DEFAULT_LEVELS = tuple(round(0.05 * k, 2) for k in range(1, 20))
DEFAULT_PERCENTILES = tuple(round(0.1 * k, 1) for k in range(1, 11))


@dataclass(frozen=True)
class CalibrationCurve:
    """Nominal probability/confidence level vs observed frequency, with counts."""

    grid: np.ndarray
    observed: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.grid)


@dataclass(frozen=True)
class PRCurve:
    """Retained fraction vs accuracy (classification) or error (regression).

    ``skipped`` lists requested levels that retained no points.
    """

    recall: np.ndarray
    value: np.ndarray
    n_retained: np.ndarray
    kind: str
    skipped: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.recall)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def classification_calibration(probs, labels, n_bins: int = 10) -> CalibrationCurve:
    """Reliability curve over every (point, class) probability.

    Each probability falls in one of ``n_bins`` equal-width bins; a bin's
    nominal value is the mean probability it holds and its observed value the
    fraction of entries whose class is the true label. Exact zeros make no
    claim about a class and are left out; empty bins are omitted.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError(f"probs must be (n, C) matching labels, got {probs.shape}")
    if np.any(probs < 0) or np.any(probs > 1) or np.any(np.abs(probs.sum(axis=1) - 1) > 1e-6):
        raise ValueError("probabilities must lie in [0, 1] and sum to 1 per row")
    hit = np.zeros_like(probs, dtype=bool)
    hit[np.arange(len(labels)), labels] = True
    p, hit = probs.ravel(), hit.ravel()
    keep = p > 0
    p, hit = p[keep], hit[keep]
    bins = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins)
    occupied = counts > 0
    conf = np.bincount(bins, weights=p, minlength=n_bins)[occupied] / counts[occupied]
    freq = np.bincount(bins, weights=hit.astype(np.float64), minlength=n_bins)[occupied] / counts[occupied]
    return CalibrationCurve(conf, freq, counts[occupied])


def central_interval_halfwidth(total_var, level: float, likelihood: str = "gaussian") -> np.ndarray:
    """Half-width of the central ``level`` interval of a zero-mean distribution."""
    total_var = np.asarray(total_var, dtype=np.float64)
    if likelihood == "gaussian":
        return NormalDist().inv_cdf(0.5 + level / 2.0) * np.sqrt(total_var)
    if likelihood == "laplace":
        b = np.sqrt(total_var / 2.0)
        return -b * math.log1p(-level)
    raise ValueError(f"unknown likelihood {likelihood!r}")


def regression_calibration(
    pred_mean, total_var, y_true, likelihood: str = "gaussian", grid: Sequence[float] = DEFAULT_LEVELS
) -> CalibrationCurve:
    """Fraction of targets inside the predicted central interval, per nominal level."""
    mu = np.ravel(np.asarray(pred_mean, dtype=np.float64))
    var = np.ravel(np.asarray(total_var, dtype=np.float64))
    y = np.ravel(np.asarray(y_true, dtype=np.float64))
    if not (mu.shape == var.shape == y.shape):
        raise ValueError("pred_mean, total_var and y_true must have equal sizes")
    if np.any(~(var > 0)):
        raise ValueError("total variance must be positive")
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(grid <= 0) or np.any(grid >= 1) or np.any(np.diff(grid) <= 0):
        raise ValueError("calibration levels must be strictly increasing in (0, 1)")
    resid = np.abs(y - mu)
    observed = np.array([np.mean(resid <= central_interval_halfwidth(var, q, likelihood)) for q in grid])
    return CalibrationCurve(grid, observed, np.full(len(grid), len(y)))


def calibration_mse(curve: CalibrationCurve) -> float:
    """Count-weighted mean squared gap between observed and nominal."""
    if len(curve) == 0:
        raise ValueError("empty calibration curve")
    w = np.asarray(curve.counts, dtype=np.float64)
    gap = np.asarray(curve.observed) - np.asarray(curve.grid)
    return float(np.sum(w * gap**2) / np.sum(w))


# ---------------------------------------------------------------------------
# precision-recall by uncertainty rejection
# ---------------------------------------------------------------------------


def precision_recall_uncertainty(
    uncertainty,
    values,
    percentiles: Sequence[float] = DEFAULT_PERCENTILES,
    kind: str = "classification",
    inverse: bool = False,
) -> PRCurve:
    """Performance on the points whose uncertainty is below each percentile.

    ``values`` holds per-point correctness (classification: accuracy of the
    retained set) or residuals (regression: RMSE of the retained set, or
    ``1/RMSE`` with ``inverse``). Thresholds are nearest-rank quantiles and
    ties at the threshold are kept, so retained sets are nested.
    """
    u = np.ravel(np.asarray(uncertainty, dtype=np.float64))
    v = np.ravel(np.asarray(values, dtype=np.float64))
    if u.shape != v.shape:
        raise ValueError("uncertainty and values must have equal lengths")
    if kind not in ("classification", "regression"):
        raise ValueError(f"unknown kind {kind!r}")
    pct = np.asarray(percentiles, dtype=np.float64)
    if np.any(pct <= 0) or np.any(pct > 1) or np.any(np.diff(pct) <= 0):
        raise ValueError("percentiles must be strictly increasing in (0, 1]")
    order = np.sort(u)
    recall, out, kept, skipped = [], [], [], []
    for p in pct:
        k = math.ceil(p * len(u) - 1e-9)
        if k < 1:
            skipped.append(float(p))
            continue
        retained = u <= order[k - 1]
        if kind == "classification":
            val = float(np.mean(v[retained]))
        else:
            val = math.sqrt(float(np.mean(np.square(v[retained]))))
            if inverse:
                val = 1.0 / val if val > 0 else math.inf
        recall.append(float(p))
        out.append(val)
        kept.append(int(retained.sum()))
    return PRCurve(np.array(recall), np.array(out), np.array(kept, dtype=np.int64), kind, skipped)


# ---------------------------------------------------------------------------
# task metrics
# ---------------------------------------------------------------------------


def regression_metrics(pred, truth) -> dict[str, float]:
    """Depth-benchmark metrics: rel, rms, log10 and threshold accuracies δ1..δ3."""
    p = np.ravel(np.asarray(pred, dtype=np.float64))
    t = np.ravel(np.asarray(truth, dtype=np.float64))
    if p.shape != t.shape:
        raise ValueError("pred and truth must have equal sizes")
    if np.any(t <= 0) or np.any(p <= 0):
        raise ValueError("ratio metrics need strictly positive predictions and truth")
    ratio = np.maximum(p / t, t / p)
    out = {
        "rel": float(np.mean(np.abs(p - t) / t)),
        "rms": float(np.sqrt(np.mean((p - t) ** 2))),
        "log10": float(np.mean(np.abs(np.log10(p) - np.log10(t)))),
    }
    for k in (1, 2, 3):
        out[f"delta{k}"] = float(np.mean(ratio < 1.25**k))
    return out


def rmse(pred, truth) -> float:
    return float(np.sqrt(np.mean((np.ravel(pred) - np.ravel(truth)) ** 2)))


def classification_metrics(pred_class, labels, num_classes: int) -> dict[str, float]:
    """Accuracy and mean IoU over classes present in labels or predictions."""
    pred = np.asarray(pred_class)
    labels = np.asarray(labels)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    tp = np.diag(conf)
    present = (conf.sum(axis=0) + conf.sum(axis=1)) > 0
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    iou = np.where(union > 0, tp / np.maximum(union, 1), 0.0)
    return {
        "accuracy": float(np.mean(pred == labels)),
        "mean_iou": float(iou[present].mean()) if present.any() else 0.0,
        "per_class_iou": iou.tolist(),
    }


# ---------------------------------------------------------------------------
# curve files
# ---------------------------------------------------------------------------


def _atomic_csv(path, header, rows, comment=None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def write_curve_csv(path, curve: CalibrationCurve | PRCurve, comment: str | None = None) -> None:
    if isinstance(curve, CalibrationCurve):
        rows = [[repr(float(a)), repr(float(b)), int(c)] for a, b, c in zip(curve.grid, curve.observed, curve.counts)]
        _atomic_csv(path, ["nominal", "observed", "count"], rows, comment)
    else:
        rows = [[repr(float(a)), repr(float(b)), int(c)] for a, b, c in zip(curve.recall, curve.value, curve.n_retained)]
        _atomic_csv(path, ["recall", "value", "n_retained"], rows, comment)


def read_curve_csv(path) -> CalibrationCurve | PRCurve:
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        rows = [r for r in reader if r]
    a = np.array([float(r[0]) for r in rows])
    b = np.array([float(r[1]) for r in rows])
    c = np.array([int(r[2]) for r in rows], dtype=np.int64)
    if header == ["nominal", "observed", "count"]:
        return CalibrationCurve(a, b, c)
    if header == ["recall", "value", "n_retained"]:
        return PRCurve(a, b, c, kind="unknown")
    raise ValueError(f"{path}: unrecognised curve header {header}")
