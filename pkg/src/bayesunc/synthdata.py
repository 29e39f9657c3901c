"""Synthetic tasks with known noise: heteroscedastic regression and noisy-label clusters."""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """Inputs ``(n, d)`` and targets (``(n, 1)`` floats or ``(n,)`` int labels).

    ``ground_truth_sigma`` is the true noise scale σ*(x) for regression or the
    label-flip probability ρ(x) for classification. ``corrupted`` marks rows
    altered by :func:`corrupt_labels`.
    """

    inputs: np.ndarray
    targets: np.ndarray
    ground_truth_sigma: np.ndarray | None = None
    corrupted: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.targets.shape[0] != n:
            raise ValueError("inputs and targets must have the same number of rows")
        if self.ground_truth_sigma is not None and self.ground_truth_sigma.shape[0] != n:
            raise ValueError("ground_truth_sigma must have one row per input")
        if self.corrupted is not None and self.corrupted.shape != (n,):
            raise ValueError("corrupted must be a boolean vector with one entry per row")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def is_classification(self) -> bool:
        return self.targets.dtype.kind in "iu"

    def take(self, idx: np.ndarray, **provenance) -> "Dataset":
        return Dataset(
            self.inputs[idx].copy(),
            self.targets[idx].copy(),
            None if self.ground_truth_sigma is None else self.ground_truth_sigma[idx].copy(),
            None if self.corrupted is None else self.corrupted[idx].copy(),
            {**self.provenance, **provenance},
        )


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionConfig:
    """``y = amplitude*sin(2π·frequency·x0) + (noise_base + noise_slope*|x0|)·ε``.

    Inputs are uniform on ``[x_low, x_high]^dim``; the target depends on the
    first coordinate only.
    """

    dim: int = 1
    x_low: float = -1.0
    x_high: float = 1.0
    frequency: float = 1.0
    amplitude: float = 1.0
    noise_base: float = 0.05
    noise_slope: float = 0.45

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.x_low < self.x_high:
            raise ValueError(f"x_low ({self.x_low}) must be below x_high ({self.x_high})")
        if self.noise_base < 0 or self.noise_slope < 0:
            raise ValueError("noise_base and noise_slope must be non-negative")

    def target(self, x: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(2.0 * np.pi * self.frequency * x[:, :1])

    def sigma(self, x: np.ndarray) -> np.ndarray:
        return self.noise_base + self.noise_slope * np.abs(x[:, :1])


def _regression_from_inputs(x: np.ndarray, seed: int, config: RegressionConfig, **prov) -> Dataset:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    sigma = config.sigma(x)
    y = config.target(x) + sigma * rng.standard_normal(sigma.shape)
    noiseless = config.noise_base == 0 and config.noise_slope == 0
    return Dataset(
        x, y, None if noiseless else sigma, None,
        {"generator": "hetero_regression", "seed": seed, "config": asdict(config), **prov},
    )


def gen_hetero_regression(n: int, seed: int, config: RegressionConfig | None = None) -> Dataset:
    config = config or RegressionConfig()
    config.validate()
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    x = rng.uniform(config.x_low, config.x_high, size=(n, config.dim))
    return _regression_from_inputs(x, seed, config)


def regression_grid(config: RegressionConfig | None = None, n: int = 200) -> np.ndarray:
    """Evenly spaced inputs over the training support along the first axis."""
    config = config or RegressionConfig()
    x = np.zeros((n, config.dim))
    x[:, 0] = np.linspace(config.x_low, config.x_high, n)
    return x


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def _default_means(num_classes: int, radius: float) -> list[list[float]]:
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes + np.pi / 4
    return [[radius * np.cos(a), radius * np.sin(a)] for a in angles]


@dataclass(frozen=True)
class ClassificationConfig:
    """Isotropic 2-D Gaussian clusters with input-dependent label flips.

    The flip probability is
    ``ρ(x) = rho_base + rho_boundary * (1 - max_c π_c(x)) * C/(C-1)``, clipped
    to ``[0, rho_max]``, where ``π(x)`` is the clean class posterior. It is
    largest between clusters. A flipped label moves to a uniformly chosen
    other class.
    """

    num_classes: int = 4
    radius: float = 2.0
    cluster_std: float = 1.0
    means: tuple | None = None
    rho_base: float = 0.0
    rho_boundary: float = 0.5
    rho_max: float = 0.9

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.cluster_std <= 0:
            raise ValueError("cluster_std must be positive")
        if self.means is not None and np.shape(self.means) != (self.num_classes, 2):
            raise ValueError("means must be num_classes x 2")
        if not (0 <= self.rho_base <= 1 and self.rho_boundary >= 0 and 0 <= self.rho_max <= 1):
            raise ValueError("flip probabilities out of range")

    def centers(self) -> np.ndarray:
        m = self.means if self.means is not None else _default_means(self.num_classes, self.radius)
        return np.asarray(m, dtype=np.float64)

    def clean_posterior(self, x: np.ndarray, centers: np.ndarray | None = None) -> np.ndarray:
        c = self.centers() if centers is None else centers
        d2 = np.sum((x[:, None, :] - c[None, :, :]) ** 2, axis=-1)
        logit = -d2 / (2 * self.cluster_std**2)
        z = np.exp(logit - logit.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def flip_prob(self, x: np.ndarray, centers: np.ndarray | None = None) -> np.ndarray:
        C = self.num_classes
        ambiguity = (1.0 - self.clean_posterior(x, centers).max(axis=1)) * C / (C - 1)
        return np.clip(self.rho_base + self.rho_boundary * ambiguity, 0.0, self.rho_max)


def _flip_to_other(rng: np.random.Generator, labels: np.ndarray, num_classes: int) -> np.ndarray:
    offset = rng.integers(1, num_classes, size=labels.shape)
    return (labels + offset) % num_classes


def _classification(n: int, seed: int, config: ClassificationConfig, centers: np.ndarray, **prov) -> Dataset:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    clean = rng.integers(0, config.num_classes, size=n)
    x = centers[clean] + config.cluster_std * rng.standard_normal((n, 2))
    rho = config.flip_prob(x, centers)
    flip = rng.random(n) < rho
    labels = np.where(flip, _flip_to_other(rng, clean, config.num_classes), clean)
    return Dataset(
        x, labels.astype(np.int64), rho, None,
        {"generator": "toy_classification", "seed": seed, "config": asdict(config),
         "clean_labels": clean.astype(np.int64), **prov},
    )


def gen_toy_classification(n: int, seed: int, config: ClassificationConfig | None = None) -> Dataset:
    config = config or ClassificationConfig()
    config.validate()
    if n < config.num_classes:
        raise ValueError("n must be at least the number of classes")
    return _classification(n, seed, config, config.centers())


# ---------------------------------------------------------------------------
# corruption, subsetting, shift
# ---------------------------------------------------------------------------


def _count(fraction: float, n: int) -> int:
    return int(np.floor(fraction * n + 0.5))


def corrupt_labels(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Alter exactly ``round(fraction*n)`` uniformly chosen rows.

    Regression targets are redrawn uniformly over the observed target range;
    class labels move to a uniformly chosen other class.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = len(ds)
    k = _count(fraction, n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    idx = np.sort(rng.choice(n, size=k, replace=False))
    targets = ds.targets.copy()
    if ds.is_classification:
        num_classes = int(ds.provenance.get("config", {}).get("num_classes", targets.max() + 1))
        targets[idx] = _flip_to_other(rng, targets[idx], num_classes)
    else:
        lo, hi = float(ds.targets.min()), float(ds.targets.max())
        targets[idx] = rng.uniform(lo, hi, size=(k,) + targets.shape[1:])
    corrupted = np.zeros(n, dtype=bool) if ds.corrupted is None else ds.corrupted.copy()
    corrupted[idx] = True
    return replace(
        ds, targets=targets, corrupted=corrupted,
        provenance={**ds.provenance, "corruption": {"fraction": fraction, "seed": seed}},
    )


def subset(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniform sample without replacement, kept in original row order.

    Subsets drawn with the same seed are nested: a smaller fraction is always
    contained in a larger one.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    k = _count(fraction, len(ds))
    if k == 0:
        raise ValueError(f"subset fraction {fraction} of {len(ds)} rows is empty")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 3])).permutation(len(ds))
    return ds.take(np.sort(perm[:k]), subset={"fraction": fraction, "seed": seed})


def ood_shift(config, shift: float, n: int, seed: int) -> Dataset:
    """Fresh test data moved outside the training support.

    Regression inputs are drawn on ``[x_high + shift, x_high + shift + 1]``
    (``[x_low + shift - 1, x_low + shift]`` for negative shifts) along the
    first axis; classification cluster means are translated by ``shift``
    along both axes. Targets follow the same ground-truth process.
    """
    if shift == 0:
        raise ValueError("shift must be non-zero")
    if isinstance(config, RegressionConfig):
        config.validate()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
        x = rng.uniform(config.x_low, config.x_high, size=(n, config.dim))
        lo = config.x_high + shift if shift > 0 else config.x_low + shift - 1.0
        x[:, 0] = rng.uniform(lo, lo + 1.0, size=n)
        inside = bool(np.any((x[:, 0] >= config.x_low) & (x[:, 0] <= config.x_high)))
        ds = _regression_from_inputs(x, seed, config, ood_shift=shift)
    elif isinstance(config, ClassificationConfig):
        config.validate()
        centers = config.centers() + shift
        ds = _classification(n, seed, config, centers, ood_shift=shift)
        train_centers = config.centers()
        gap = np.min(np.linalg.norm(centers[:, None] - train_centers[None], axis=-1))
        inside = gap < 3.0 * config.cluster_std
    else:
        raise TypeError(f"unsupported config type {type(config).__name__}")
    if inside:
        warnings.warn(f"shift {shift} leaves test data inside the training support", stacklevel=2)
    return replace(ds, provenance={**ds.provenance, "inside_support": bool(inside)})


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def write_dataset_csv(path, ds: Dataset) -> None:
    """Columns ``x0..x{d-1},y`` then ``sigma_true`` (regression) or ``rho_true``
    (classification) when known, then ``corrupted`` (0/1) when tracked."""
    d = ds.inputs.shape[1]
    noise_col = "rho_true" if ds.is_classification else "sigma_true"
    header = [f"x{k}" for k in range(d)] + ["y"]
    if ds.ground_truth_sigma is not None:
        header.append(noise_col)
    if ds.corrupted is not None:
        header.append("corrupted")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.inputs[i]]
            row.append(str(int(ds.targets[i])) if ds.is_classification else repr(float(ds.targets[i, 0])))
            if ds.ground_truth_sigma is not None:
                row.append(repr(float(np.ravel(ds.ground_truth_sigma[i])[0])))
            if ds.corrupted is not None:
                row.append(str(int(ds.corrupted[i])))
            w.writerow(row)
    tmp.replace(path)


def read_dataset_csv(path, classification: bool | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    cols = {name: [r[k] for r in rows] for k, name in enumerate(header)}
    xs = sorted((h for h in header if h.startswith("x")), key=lambda h: int(h[1:]))
    inputs = np.array([[float(v) for v in cols[h]] for h in xs]).T.reshape(len(rows), len(xs))
    if classification is None:
        classification = "rho_true" in cols or all(v.lstrip("-").isdigit() for v in cols["y"])
    if classification:
        targets = np.array([int(v) for v in cols["y"]], dtype=np.int64)
    else:
        targets = np.array([float(v) for v in cols["y"]]).reshape(-1, 1)
    noise_name = "rho_true" if "rho_true" in cols else "sigma_true"
    noise = None
    if noise_name in cols:
        noise = np.array([float(v) for v in cols[noise_name]])
        if not classification:
            noise = noise.reshape(-1, 1)
    corrupted = np.array([v == "1" for v in cols["corrupted"]]) if "corrupted" in cols else None
    return Dataset(inputs, targets, noise, corrupted, {"source": str(path)})
