"""Parameter importance (MAS, EWC) and neuron importance, accumulated over tasks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .nn import Mlp, ShapeError, forward, layer_inputs, log_softmax, pre_activation_grads

METHODS = ("mas", "ewc")
NEURON_MODES = ("function", "loss")


@dataclass
class ParamImportance:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    method: str = "mas"

    @classmethod
    def zeros(cls, model: Mlp, method: str = "mas") -> "ParamImportance":
        return cls(
            [np.zeros_like(l.weights) for l in model.layers],
            [np.zeros_like(l.biases) for l in model.layers],
            method,
        )

    def as_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "ParamImportance":
        return ParamImportance([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.method)


@dataclass
class NeuronImportance:
    alpha: list[np.ndarray]

    @classmethod
    def zeros(cls, model: Mlp) -> "NeuronImportance":
        return cls([np.zeros(l.fan_out) for l in model.layers[:-1]])

    def copy(self) -> "NeuronImportance":
        return NeuronImportance([a.copy() for a in self.alpha])


def _batches(inputs: np.ndarray, labels: np.ndarray | None, batch_size: int):
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("importance needs at least one example")
    for start in range(0, inputs.shape[0], batch_size):
        stop = start + batch_size
        yield inputs[start:stop], (None if labels is None else np.asarray(labels)[start:stop])


def _per_example_loss_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    g = np.exp(log_softmax(logits))
    g[np.arange(len(labels)), labels] -= 1.0
    return g


def mas_parameter_importance(model: Mlp, inputs: np.ndarray, batch_size: int = 256) -> ParamImportance:
    """Mean absolute per-example gradient of ``0.5 * ||logits||^2`` w.r.t. each parameter.

    A weight's per-example gradient is ``delta_i * a_j``, so the mean of its
    absolute value factorizes into ``|delta|.T @ |a|``; no per-example loop.
    """
    omega = ParamImportance.zeros(model, "mas")
    total = 0
    for x, _ in _batches(inputs, None, batch_size):
        rec = forward(model, x)
        deltas = pre_activation_grads(model, rec, rec.logits)
        for l, (d, a) in enumerate(zip(deltas, layer_inputs(rec))):
            ad = np.abs(d)
            omega.weights[l] += ad.T @ np.abs(a)
            omega.biases[l] += ad.sum(axis=0)
        total += x.shape[0]
    return _scaled(omega, 1.0 / total)


def ewc_fisher_importance(
    model: Mlp, inputs: np.ndarray, labels: np.ndarray, batch_size: int = 256
) -> ParamImportance:
    """Empirical diagonal Fisher: mean squared per-example log-loss gradient, true labels."""
    if labels is None:
        raise ValueError("EWC importance needs labels")
    fisher = ParamImportance.zeros(model, "ewc")
    total = 0
    for x, y in _batches(inputs, labels, batch_size):
        rec = forward(model, x)
        deltas = pre_activation_grads(model, rec, _per_example_loss_grad(rec.logits, y))
        for l, (d, a) in enumerate(zip(deltas, layer_inputs(rec))):
            d2 = d * d
            fisher.weights[l] += d2.T @ (a * a)
            fisher.biases[l] += d2.sum(axis=0)
        total += x.shape[0]
    return _scaled(fisher, 1.0 / total)


def parameter_importance(model, inputs, labels=None, method="mas", batch_size=256) -> ParamImportance:
    if method == "mas":
        return mas_parameter_importance(model, inputs, batch_size)
    if method == "ewc":
        return ewc_fisher_importance(model, inputs, labels, batch_size)
    raise ValueError(f"unknown importance method {method!r}")


def neuron_importance(
    model: Mlp,
    inputs: np.ndarray,
    labels: np.ndarray | None = None,
    mode: str = "function",
    batch_size: int = 256,
) -> NeuronImportance:
    """Mean absolute gradient w.r.t. each hidden neuron's pre-activation.

    ``mode="function"`` differentiates ``0.5 * ||logits||^2`` (pairs with MAS);
    ``mode="loss"`` differentiates the per-example cross-entropy (pairs with EWC).
    """
    if mode not in NEURON_MODES:
        raise ValueError(f"unknown neuron importance mode {mode!r}")
    if mode == "loss" and labels is None:
        raise ValueError("loss-gradient neuron importance needs labels")
    acc = NeuronImportance.zeros(model)
    total = 0
    for x, y in _batches(inputs, labels, batch_size):
        rec = forward(model, x)
        upstream = rec.logits if mode == "function" else _per_example_loss_grad(rec.logits, y)
        deltas = pre_activation_grads(model, rec, upstream)
        for l in range(model.n_hidden):
            acc.alpha[l] += np.abs(deltas[l]).sum(axis=0)
        total += x.shape[0]
    return NeuronImportance([a / total for a in acc.alpha])


def _scaled(imp: ParamImportance, factor: float) -> ParamImportance:
    return ParamImportance([w * factor for w in imp.weights], [b * factor for b in imp.biases], imp.method)


def accumulate_importance(old, new):
    """Element-wise sum of two importance maps of the same kind and shape."""
    if isinstance(old, ParamImportance) and isinstance(new, ParamImportance):
        _check_shapes(old.as_list(), new.as_list())
        return ParamImportance(
            [a + b for a, b in zip(old.weights, new.weights)],
            [a + b for a, b in zip(old.biases, new.biases)],
            new.method,
        )
    if isinstance(old, NeuronImportance) and isinstance(new, NeuronImportance):
        _check_shapes(old.alpha, new.alpha)
        return NeuronImportance([a + b for a, b in zip(old.alpha, new.alpha)])
    raise TypeError(f"cannot accumulate {type(old).__name__} with {type(new).__name__}")


def _check_shapes(a: Iterable[np.ndarray], b: Iterable[np.ndarray]):
    a, b = list(a), list(b)
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ShapeError("importance maps have different shapes")
