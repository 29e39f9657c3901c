"""Training objectives.

Every loss accepts either graph nodes (returns a scalar node, for training)
or plain arrays (returns a float). Targets and labels are always constants.
Reductions are means over all elements, so losses are comparable across
batch sizes.
"""

from __future__ import annotations

import functools
import math

import numpy as np

from .autodiff import Graph, Node, ShapeError, as_tensor
from .network import weight_decay_term


def _graph_or_value(fn):
    """Let a node-level loss be called on arrays; array arguments become constants."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        graph = next((a.graph for a in args if isinstance(a, Node)), None)
        if graph is not None:
            return fn(graph, *args, **kwargs)
        g = Graph(check_finite=False)
        out = fn(g, *args, **kwargs)
        return float(out.value)

    return wrapper


def _node(graph: Graph, x) -> Node:
    return x if isinstance(x, Node) else graph.constant(x)


def _same_shape(op: str, *shapes) -> None:
    if any(s != shapes[0] for s in shapes):
        raise ShapeError(f"{op}: shapes {shapes} must match")


def _check_labels(labels, num_classes: int, op: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"{op}: labels must be integers in [0, {num_classes})")
    return labels


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


@_graph_or_value
def gaussian_hetero_nll(graph, y, y_hat, s):
    """Mean of ``0.5*exp(-s)*(y - y_hat)^2 + 0.5*s`` with ``s = log σ²``."""
    y_hat, s = _node(graph, y_hat), _node(graph, s)
    y = as_tensor(y)
    _same_shape("gaussian_hetero_nll", y.shape, y_hat.shape, s.shape)
    resid = (y_hat - y).square()
    return ((-s).exp() * resid * 0.5 + s * 0.5).mean()


@_graph_or_value
def laplace_hetero_nll(graph, y, y_hat, s):
    """Mean of ``exp(-s)*|y - y_hat| + s`` with ``s = log b``; the ``log 2`` constant is dropped."""
    y_hat, s = _node(graph, y_hat), _node(graph, s)
    y = as_tensor(y)
    _same_shape("laplace_hetero_nll", y.shape, y_hat.shape, s.shape)
    return ((-s).exp() * (y_hat - y).abs() + s).mean()


@_graph_or_value
def fixed_sigma_nll(graph, y, y_hat, sigma: float = 1.0):
    """Homoscedastic Gaussian NLL, ``mean((y - y_hat)^2)/(2σ²) + 0.5 log σ²``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    y_hat = _node(graph, y_hat)
    y = as_tensor(y)
    _same_shape("fixed_sigma_nll", y.shape, y_hat.shape)
    var = float(sigma) ** 2
    return (y_hat - y).square().mean() * (0.5 / var) + 0.5 * math.log(var)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


@_graph_or_value
def softmax_xent(graph, logits, labels):
    """Mean over the batch of ``logsumexp(f) - f_c``.

    ``logits`` is ``(batch, C)`` (a single ``(C,)`` vector is also accepted
    with a scalar label).
    """
    logits = _node(graph, logits)
    labels = np.asarray(labels)
    if logits.value.ndim == 1:
        logits = graph.constant(np.ones((1, logits.shape[0]))) * logits
        labels = labels.reshape(1)
    num_classes = logits.shape[-1]
    labels = _check_labels(labels, num_classes, "softmax_xent")
    picked = (logits * _one_hot(labels, num_classes)).sum(axis=-1)
    return (logits.logsumexp() - picked).mean()


def draw_logit_noise(rng: np.random.Generator, num_samples: int, shape: tuple) -> np.ndarray:
    """Standard normal draws of shape ``(num_samples, *shape)``."""
    if num_samples < 1:
        raise ValueError(f"number of noise samples must be >= 1, got {num_samples}")
    return rng.standard_normal((num_samples,) + tuple(shape))


@_graph_or_value
def stochastic_softmax_xent(graph, logits, s_logits, labels, num_samples=None, rng=None, noise=None):
    """Monte Carlo NLL of the logit-noise classifier.

    Logits are corrupted as ``x_t = f + σ ε_t`` with ``σ = exp(s_logits)`` and
    ``ε_t ~ N(0, I)``; the per-point loss is
    ``-(logsumexp_t(x_t,c - logsumexp_c' x_t,c') - log T)``, i.e. minus the log
    of the Monte Carlo mean of the softmax probability of the observed class.
    The result is averaged over the batch.

    Pass either ``noise`` (shape ``(T, batch, C)``, reused as-is, which makes
    the loss a deterministic function of ``logits`` and ``s_logits``) or
    ``num_samples`` together with a ``numpy.random.Generator``.
    ``s_logits = -inf`` is allowed and means σ = 0.
    """
    f = _node(graph, logits)
    s = _node(graph, s_logits)
    _same_shape("stochastic_softmax_xent", f.shape, s.shape)
    if f.value.ndim != 2:
        raise ShapeError(f"stochastic_softmax_xent: logits must be (batch, C), got {f.shape}")
    batch, num_classes = f.shape
    labels = _check_labels(np.asarray(labels).reshape(batch), num_classes, "stochastic_softmax_xent")
    if noise is None:
        if num_samples is None or rng is None:
            raise ValueError("pass either noise, or num_samples and rng")
        noise = draw_logit_noise(rng, num_samples, (batch, num_classes))
    noise = as_tensor(noise)
    if noise.ndim != 3 or noise.shape[1:] != (batch, num_classes) or noise.shape[0] < 1:
        raise ShapeError(f"noise must be (T, {batch}, {num_classes}) with T >= 1, got {noise.shape}")
    num_samples = noise.shape[0]

    x = graph.constant(noise) * s.exp() + f  # (T, batch, C)
    log_p = (x * _one_hot(labels, num_classes)).sum(axis=-1) - x.logsumexp()  # (T, batch)
    log_mean_p = log_p.T.logsumexp() - math.log(num_samples)  # (batch,)
    return -log_mean_p.mean()


# ---------------------------------------------------------------------------
# composed objective
# ---------------------------------------------------------------------------


def dropout_vi_objective(mean_nll, params, dropout_p: float, n: int, scale: float = 1.0):
    """Mean NLL plus the dropout weight-decay term ``scale*(1-p)/(2N)*||W||^2``."""
    return mean_nll + weight_decay_term(params, dropout_p, n, scale)
