"""Dropout MLP with a split head, weight-decay term and RMSProp updates.

Parameter names:

* ``W{k}``, ``b{k}`` for trunk layer ``k`` (input -> hidden ... -> last hidden),
* ``W_out``, ``b_out`` for the prediction head (``ŷ`` or logits ``f``),
* ``W_s``, ``b_s`` for the uncertainty head, present on heteroscedastic heads.

For regression the uncertainty head predicts ``s = log σ²`` (Gaussian) or
``s = log b`` (Laplace). For classification it predicts ``log σ``, the log of
the per-class logit noise scale, so ``σ = exp(s)``.

Dropout uses the inverted convention: kept units are scaled by ``1/(1-p)`` in
masked passes, and the unmasked pass is the deterministic MAP forward.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .autodiff import Graph, Node, NonFiniteError, ShapeError

HEADS = ("regression_hetero", "regression_plain", "classification_hetero", "classification_plain")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of the MLP.

    ``layer_widths`` is ``[input_dim, hidden_1, ..., hidden_L, output_dim]``
    where ``output_dim`` is the task dimension (1 for scalar regression, C
    for classification); heteroscedastic heads add a second head of the same
    width (or width 1 when ``tie_sigma``).
    """

    layer_widths: tuple[int, ...]
    dropout_p: float = 0.2
    head: str = "regression_hetero"
    activation: str = "relu"
    input_dropout: bool = False
    s_bias_init: float = -2.0
    tie_sigma: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("layer_widths needs input, at least one hidden layer and output")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.is_classification and widths[-1] < 2:
            raise ValueError("classification heads need at least 2 classes")

    @property
    def is_hetero(self) -> bool:
        return self.head.endswith("_hetero")

    @property
    def is_classification(self) -> bool:
        return self.head.startswith("classification")

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def hidden(self) -> tuple[int, ...]:
        return self.layer_widths[1:-1]

    def dropout_sites(self) -> list[int]:
        """Widths of the activations dropped before each weight layer."""
        sites = list(self.hidden)
        return [self.in_dim] + sites if self.input_dropout else sites

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "dropout_p": self.dropout_p,
            "head": self.head,
            "activation": self.activation,
            "input_dropout": self.input_dropout,
            "s_bias_init": self.s_bias_init,
            "tie_sigma": self.tie_sigma,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(**{**d, "layer_widths": tuple(d["layer_widths"])})


@dataclass(frozen=True)
class Parameters:
    """Immutable snapshot of weights and biases, in a fixed name order."""

    arrays: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def weights(self) -> list[np.ndarray]:
        return [v for k, v in self.arrays.items() if k.startswith("W")]

    def equals(self, other: "Parameters") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[k], other[k]) for k in self.names()
        )


def _layer_shapes(spec: NetworkSpec) -> dict[str, tuple]:
    shapes = {}
    widths = spec.layer_widths
    for k in range(len(widths) - 2):
        shapes[f"W{k}"] = (widths[k], widths[k + 1])
        shapes[f"b{k}"] = (widths[k + 1],)
    last = widths[-2]
    shapes["W_out"] = (last, spec.out_dim)
    shapes["b_out"] = (spec.out_dim,)
    if spec.is_hetero:
        s_width = 1 if spec.tie_sigma else spec.out_dim
        shapes["W_s"] = (last, s_width)
        shapes["b_s"] = (s_width,)
    return shapes


def init_network(spec: NetworkSpec, seed: int) -> Parameters:
    """He-normal weights, zero biases, uncertainty-head bias at ``spec.s_bias_init``.

    Every weight matrix draws from its own child stream of ``seed`` so the
    trunk and prediction head are identical for plain and heteroscedastic
    variants of the same architecture.
    """
    arrays = {}
    for k, (name, shape) in enumerate(_layer_shapes(spec).items()):
        if name.startswith("W"):
            rng = np.random.default_rng(np.random.SeedSequence([seed, _stream_id(name)]))
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        elif name == "b_s":
            arrays[name] = np.full(shape, float(spec.s_bias_init))
        else:
            arrays[name] = np.zeros(shape)
    return Parameters(arrays)


def _stream_id(name: str) -> int:
    if name == "W_out":
        return 1_000_000
    if name == "W_s":
        return 1_000_001
    return int(name[1:])


# ---------------------------------------------------------------------------
# dropout masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DropoutMask:
    """Bernoulli(1-p) keep-masks for every dropout site, tagged with their origin."""

    layers: tuple[np.ndarray, ...]
    seed: int
    index: int


def sample_mask(spec: NetworkSpec, batch: int, seed: int, index: int) -> DropoutMask:
    """Masks for one stochastic pass; a pure function of ``(seed, index)``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    keep = 1.0 - spec.dropout_p
    layers = tuple(
        (rng.random((batch, width)) < keep).astype(np.float64) for width in spec.dropout_sites()
    )
    return DropoutMask(layers, seed, index)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


class HeadOutput(NamedTuple):
    mean: np.ndarray
    s: np.ndarray | None


def _drop(h: Node, mask: np.ndarray | None, p: float, site: int) -> Node:
    if mask is None:
        return h
    if mask.shape != h.shape:
        raise ShapeError(f"dropout site {site}: mask shape {mask.shape} != activations {h.shape}")
    return h * (mask / (1.0 - p))


def build_forward(
    graph: Graph,
    nodes: Mapping[str, Node],
    spec: NetworkSpec,
    x: np.ndarray | Node,
    mask: DropoutMask | None = None,
) -> tuple[Node, Node | None]:
    """Record a forward pass on ``graph`` and return ``(mean, s)`` nodes."""
    h = x if isinstance(x, Node) else graph.constant(x)
    if h.value.ndim != 2 or h.shape[1] != spec.in_dim:
        raise ShapeError(f"input shape {h.shape} does not match input width {spec.in_dim}")
    masks = list(mask.layers) if mask is not None else None
    if masks is not None and len(masks) != len(spec.dropout_sites()):
        raise ShapeError(
            f"mask has {len(masks)} layers, network has {len(spec.dropout_sites())} dropout sites"
        )
    site = 0

    n_trunk = len(spec.layer_widths) - 2
    for k in range(n_trunk):
        if k > 0 or spec.input_dropout:
            h = _drop(h, masks[site] if masks else None, spec.dropout_p, site)
            site += 1
        h = (h @ nodes[f"W{k}"] + nodes[f"b{k}"]).relu()
        if not np.all(np.isfinite(h.value)):
            raise NonFiniteError(f"non-finite activations at layer {k}")

    h = _drop(h, masks[site] if masks else None, spec.dropout_p, site)
    out = h @ nodes["W_out"] + nodes["b_out"]
    s = None
    if spec.is_hetero:
        s = h @ nodes["W_s"] + nodes["b_s"]
        if spec.tie_sigma:
            s = s @ np.ones((1, spec.out_dim))
    for name, node in (("output", out), ("uncertainty", s)):
        if node is not None and not np.all(np.isfinite(node.value)):
            raise NonFiniteError(f"non-finite {name} head at layer {n_trunk}")
    return out, s


def parameter_nodes(graph: Graph, params: Parameters) -> dict[str, Node]:
    return {name: graph.parameter(value, name=name) for name, value in params.arrays.items()}


def forward(
    params: Parameters,
    spec: NetworkSpec,
    x: np.ndarray,
    mask: DropoutMask | None = None,
) -> HeadOutput:
    """Evaluate the network. ``mask=None`` gives the deterministic MAP pass."""
    g = Graph()
    nodes = {name: g.constant(v) for name, v in params.arrays.items()}
    out, s = build_forward(g, nodes, spec, np.asarray(x, dtype=np.float64), mask)
    return HeadOutput(out.value, None if s is None else s.value)


# ---------------------------------------------------------------------------
# objective pieces and optimiser
# ---------------------------------------------------------------------------


def weight_decay_term(params, dropout_p: float, n: int, scale: float = 1.0):
    """``scale * (1-p)/(2N) * ||W||^2`` over weight matrices (biases excluded).

    ``params`` may be a :class:`Parameters` snapshot (returns a float) or a
    mapping of graph nodes (returns a node).
    """
    if n < 1:
        raise ValueError("N must be at least 1")
    coef = scale * (1.0 - dropout_p) / (2.0 * n)
    if isinstance(params, Parameters):
        return coef * sum(float(np.sum(np.square(w))) for w in params.weights())
    total = None
    for name, node in params.items():
        if name.startswith("W"):
            term = node.square().sum()
            total = term if total is None else total + term
    return total * coef


@dataclass(frozen=True)
class OptimizerState:
    """RMSProp state. ``weight_decay`` multiplies the dropout-VI decay term in the loss."""

    accumulators: dict[str, np.ndarray]
    lr: float = 1e-3
    decay: float = 0.9
    eps: float = 1e-8
    weight_decay: float = 1.0
    step: int = 0

    @classmethod
    def create(cls, params: Parameters, **kwargs) -> "OptimizerState":
        acc = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        return cls(acc, **kwargs)


def train_step(
    state: OptimizerState, params: Parameters, grads: Mapping[str, np.ndarray]
) -> tuple[Parameters, OptimizerState]:
    """One RMSProp update; returns new snapshots and leaves the inputs untouched."""
    for name in params.names():
        if name not in grads:
            raise KeyError(f"missing gradient for {name}")
        g = grads[name]
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name} at step {state.step}")
    new_params, new_acc = {}, {}
    for name, w in params.arrays.items():
        g = grads[name]
        acc = state.decay * state.accumulators[name] + (1.0 - state.decay) * g * g
        new_acc[name] = acc
        new_params[name] = w - state.lr * g / (np.sqrt(acc) + state.eps)
    return Parameters(new_params), replace(state, accumulators=new_acc, step=state.step + 1)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"BDLCKPT\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: Parameters, spec: NetworkSpec, extra: Mapping | None = None) -> None:
    """Write ``params`` in the versioned binary checkpoint format.

    Layout: 8-byte magic, little-endian uint32 version, uint32 header length,
    UTF-8 JSON header ``{"spec", "tensors": [[name, shape], ...], "extra"}``,
    then each tensor's values as row-major little-endian float64 in header order.
    """
    header = {
        "spec": spec.to_dict(),
        "tensors": [[k, list(v.shape)] for k, v in params.arrays.items()],
        "extra": dict(extra or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.arrays.values()]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[Parameters, NetworkSpec, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + hlen])
    offset = 16 + hlen
    arrays = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after payload")
    return Parameters(arrays), NetworkSpec.from_dict(header["spec"]), header["extra"]
