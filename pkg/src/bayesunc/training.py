"""Minibatch training of the dropout MLP under the dropout-VI objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .autodiff import Graph, NonFiniteError
from .network import (
    NetworkSpec,
    OptimizerState,
    Parameters,
    build_forward,
    init_network,
    parameter_nodes,
    sample_mask,
    train_step,
)
from .synthdata import Dataset

LOSSES = ("fixed_sigma", "gaussian_hetero", "laplace_hetero", "softmax", "stochastic_softmax")

# stream tags keep training randomness independent of initialisation
_MASK_STREAM, _BATCH_STREAM, _NOISE_STREAM = 0xD0, 0xBA, 0x5E


class TrainingError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    loss: str
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1.0
    seed: int = 0
    sigma: float = 1.0
    loss_samples: int = 10

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.loss_samples < 1:
            raise ValueError("epochs, batch_size, lr and loss_samples must be positive")


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    steps: int = 0


def _derived_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def check_loss_head(spec: NetworkSpec, loss: str) -> None:
    hetero = loss in ("gaussian_hetero", "laplace_hetero", "stochastic_softmax")
    classification = loss in ("softmax", "stochastic_softmax")
    if hetero != spec.is_hetero or classification != spec.is_classification:
        raise ValueError(f"loss {loss!r} does not fit head {spec.head!r}")


def batch_loss(graph: Graph, nodes, spec: NetworkSpec, x, y, cfg: TrainConfig, mask, noise_rng):
    """Mean NLL of one minibatch as a graph node."""
    out, s = build_forward(graph, nodes, spec, x, mask)
    if cfg.loss == "fixed_sigma":
        return losses.fixed_sigma_nll(y, out, cfg.sigma)
    if cfg.loss == "gaussian_hetero":
        return losses.gaussian_hetero_nll(y, out, s)
    if cfg.loss == "laplace_hetero":
        return losses.laplace_hetero_nll(y, out, s)
    if cfg.loss == "softmax":
        return losses.softmax_xent(out, y)
    return losses.stochastic_softmax_xent(out, s, y, num_samples=cfg.loss_samples, rng=noise_rng)


def fit(
    spec: NetworkSpec,
    data: Dataset,
    cfg: TrainConfig,
    params: Parameters | None = None,
    init_seed: int | None = None,
) -> tuple[Parameters, TrainHistory]:
    """Train with RMSProp; a pure function of ``(spec, data, cfg, init)``.

    Every step draws fresh dropout masks from ``(seed, step)`` and minimises
    ``mean NLL + weight_decay*(1-p)/(2N)*||W||^2`` with ``N = len(data)``.
    """
    check_loss_head(spec, cfg.loss)
    if params is None:
        params = init_network(spec, cfg.seed if init_seed is None else init_seed)
    state = OptimizerState.create(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(data)
    mask_seed = _derived_seed(cfg.seed, _MASK_STREAM)
    history = TrainHistory()
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, _BATCH_STREAM, epoch])).permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, y = data.inputs[idx], data.targets[idx]
            g = Graph()
            nodes = parameter_nodes(g, params)
            mask = sample_mask(spec, len(idx), mask_seed, step) if spec.dropout_p > 0 else None
            noise_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _NOISE_STREAM, step]))
            try:
                nll = batch_loss(g, nodes, spec, x, y, cfg, mask, noise_rng)
                objective = losses.dropout_vi_objective(nll, nodes, spec.dropout_p, n, cfg.weight_decay)
            except NonFiniteError as err:
                raise TrainingError(f"non-finite loss: {err}", step) from err
            grads = g.backward(objective)
            named = {name: grads[node.id] for name, node in nodes.items()}
            try:
                params, state = train_step(state, params, named)
            except NonFiniteError as err:
                raise TrainingError(str(err), step) from err
            total += float(nll.value) * len(idx)
            seen += len(idx)
            step += 1
        history.epoch_loss.append(total / max(seen, 1))
    history.steps = step
    return params, history
