"""Dense feed-forward network with hand-written backpropagation.

Weights are stored ``[out, in]`` so a layer computes ``x @ W.T + b``.
Everything runs in float64; the gradient checks rely on it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "maxout", "lwta")


class ShapeError(ValueError):
    """Raised when array dimensions do not chain."""


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and biases {self.biases.shape} do not match"
            )

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy())


@dataclass
class Mlp:
    """A stack of dense layers; every layer but the last is followed by the activation.

    For ``maxout`` the hidden output width is ``fan_out // window`` and the
    next layer's fan-in must match that reduced width.
    """

    layers: list[DenseLayer]
    activation: str = "relu"
    window: int = 2

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.layers:
            raise ShapeError("an Mlp needs at least one layer")
        for idx, (layer, nxt) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            width = layer.fan_out
            if self.activation in ("maxout", "lwta"):
                if width % self.window:
                    raise ShapeError(
                        f"hidden layer {idx} width {width} not divisible by window {self.window}"
                    )
                if self.activation == "maxout":
                    width //= self.window
            if nxt.fan_in != width:
                raise ShapeError(f"layer {idx} emits {width} values but layer {idx + 1} expects {nxt.fan_in}")

    @classmethod
    def init(
        cls,
        sizes: Sequence[int],
        activation: str = "relu",
        window: int = 2,
        rng: np.random.Generator | int | None = 0,
    ) -> "Mlp":
        """Glorot-uniform weights, zero biases.

        ``sizes`` lists the input width, the hidden pre-activation widths and
        the class count, e.g. ``[784, 128, 128, 10]``.
        """
        rng = np.random.default_rng(rng)
        layers = []
        fan_in = sizes[0]
        for i, fan_out in enumerate(sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            layers.append(DenseLayer(w, np.zeros(fan_out)))
            hidden = i < len(sizes) - 2
            fan_in = fan_out // window if (hidden and activation == "maxout") else fan_out
        return cls(layers, activation, window)

    @property
    def n_hidden(self) -> int:
        return len(self.layers) - 1

    @property
    def input_size(self) -> int:
        return self.layers[0].fan_in

    @property
    def n_classes(self) -> int:
        return self.layers[-1].fan_out

    def params(self) -> list[np.ndarray]:
        """Live references ``[W0, b0, W1, b1, ...]``."""
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.biases]
        return out

    def copy(self) -> "Mlp":
        return Mlp([layer.copy() for layer in self.layers], self.activation, self.window)

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ShapeError(f"inputs must be a non-empty [M, D] matrix, got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError(f"{self.labels.shape[0]} labels for {self.inputs.shape[0]} inputs")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ActivationsRecord:
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    logits: np.ndarray
    # winner masks over the pre-activations, maxout/lwta only
    masks: list[np.ndarray | None] = field(default_factory=list)


@dataclass
class Gradients:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: Mlp) -> "Gradients":
        return cls(
            [np.zeros_like(l.weights) for l in model.layers],
            [np.zeros_like(l.biases) for l in model.layers],
        )

    @classmethod
    def from_list(cls, arrays: Sequence[np.ndarray]) -> "Gradients":
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def as_list(self) -> list[np.ndarray]:
        out = []
        for dw, db in zip(self.d_weights, self.d_biases):
            out += [dw, db]
        return out

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients.from_list([a + b for a, b in zip(self.as_list(), other.as_list())])

    def scaled(self, factor: float) -> "Gradients":
        return Gradients.from_list([factor * a for a in self.as_list()])

    def is_finite(self) -> bool:
        # a NaN or inf anywhere makes the sum non-finite; overflow of a finite sum would need ~1e308 entries
        return all(np.isfinite(a.sum()) for a in self.as_list())


def _windows(pre: np.ndarray, window: int) -> np.ndarray:
    m, n = pre.shape
    if n % window:
        raise ShapeError(f"width {n} is not divisible by window {window}")
    return pre.reshape(m, n // window, window)


def winner_mask(pre: np.ndarray, window: int) -> np.ndarray:
    """Boolean mask marking the first maximum of every disjoint window."""
    grouped = _windows(pre, window)
    idx = grouped.argmax(axis=2)
    mask = np.zeros(grouped.shape, dtype=bool)
    np.put_along_axis(mask, idx[..., None], True, axis=2)
    return mask.reshape(pre.shape)


def apply_activation(pre: np.ndarray, kind: str = "relu", window: int = 2) -> np.ndarray:
    pre = np.atleast_2d(np.asarray(pre, dtype=np.float64))
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "lwta":
        return np.where(winner_mask(pre, window), pre, 0.0)
    if kind == "maxout":
        return _windows(pre, window).max(axis=2)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_backward(pre, d_post, mask, kind, window):
    if kind == "relu":
        return d_post * (pre > 0)
    if kind == "lwta":
        return d_post * mask
    # maxout: broadcast each window's gradient onto its winner
    return np.repeat(d_post, window, axis=1) * mask


def forward(model: Mlp, inputs: np.ndarray | Batch) -> ActivationsRecord:
    x = inputs.inputs if isinstance(inputs, Batch) else np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != model.input_size:
        raise ShapeError(f"input width {x.shape[1]} != model input size {model.input_size}")
    pre, post, masks = [], [], []
    a = x
    for layer in model.layers[:-1]:
        n = a @ layer.weights.T + layer.biases
        mask = winner_mask(n, model.window) if model.activation != "relu" else None
        if model.activation == "relu":
            h = np.maximum(n, 0.0)
        elif model.activation == "lwta":
            h = np.where(mask, n, 0.0)
        else:
            h = _windows(n, model.window).max(axis=2)
        pre.append(n)
        post.append(h)
        masks.append(mask)
        a = h
    out = model.layers[-1]
    logits = a @ out.weights.T + out.biases
    return ActivationsRecord(x, pre, post, logits, masks)


def predict(model: Mlp, inputs: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    return forward(model, inputs).logits.argmax(axis=1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    m, c = logits.shape
    if labels.shape != (m,):
        raise ShapeError(f"{labels.shape} labels for {m} rows of logits")
    if m and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    logp = log_softmax(logits)
    rows = np.arange(m)
    loss = -logp[rows, labels].mean()
    d_logits = np.exp(logp)
    d_logits[rows, labels] -= 1.0
    return float(loss), d_logits / m


def pre_activation_grads(
    model: Mlp,
    record: ActivationsRecord,
    d_logits: np.ndarray,
    injected: Sequence[np.ndarray | None] | None = None,
) -> list[np.ndarray]:
    """Gradient of the objective w.r.t. every layer's pre-activations, logits last.

    ``injected[l]`` is added to the gradient arriving at hidden layer ``l``'s
    post-activations; that is how activation regularizers enter.
    """
    if len(record.pre) != model.n_hidden or record.logits.shape[1] != model.n_classes:
        raise ShapeError("activations record was not produced by this model")
    if injected is None:
        injected = [None] * model.n_hidden
    if len(injected) != model.n_hidden:
        raise ShapeError(f"{len(injected)} injected gradients for {model.n_hidden} hidden layers")
    delta = np.asarray(d_logits, dtype=np.float64)
    if delta.shape != record.logits.shape:
        raise ShapeError(f"d_logits {delta.shape} != logits {record.logits.shape}")
    deltas = [delta]
    for l in range(model.n_hidden, 0, -1):
        d_post = delta @ model.layers[l].weights
        extra = injected[l - 1]
        if extra is not None:
            if extra.shape != d_post.shape:
                raise ShapeError(f"injected gradient {extra.shape} != activations {d_post.shape}")
            d_post = d_post + extra
        delta = _activation_backward(record.pre[l - 1], d_post, record.masks[l - 1], model.activation, model.window)
        deltas.append(delta)
    return deltas[::-1]


def layer_inputs(record: ActivationsRecord) -> list[np.ndarray]:
    return [record.inputs] + record.post


def backward(
    model: Mlp,
    record: ActivationsRecord,
    d_logits: np.ndarray,
    injected: Sequence[np.ndarray | None] | None = None,
) -> Gradients:
    """Parameter gradients of the loss plus any injected activation-gradient terms."""
    deltas = pre_activation_grads(model, record, d_logits, injected)
    inputs = layer_inputs(record)
    return Gradients([d.T @ a for d, a in zip(deltas, inputs)], [d.sum(axis=0) for d in deltas])


def sgd_step(model: Mlp, grads: Gradients, learning_rate: float) -> Mlp:
    """Plain SGD, in place. Returns the model for chaining."""
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    if not grads.is_finite():
        raise DivergenceError("non-finite gradient; lower the learning rate or the regularization strength")
    for p, g in zip(model.params(), grads.as_list()):
        p -= learning_rate * g
    return model


def finite_difference_gradient(
    loss_fn: Callable[[Mlp], float], model: Mlp, step: float = 1e-5
) -> Gradients:
    """Central differences over every parameter. Slow; for verification only."""
    if step <= 0:
        raise ValueError("step must be positive")
    grads = []
    for p in model.params():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(model)
            flat[i] = orig - step
            down = loss_fn(model)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise DivergenceError(f"non-finite loss while perturbing parameter {i}")
            gflat[i] = (up - down) / (2 * step)
        grads.append(g)
    return Gradients.from_list(grads)


def max_relative_error(a: Sequence[np.ndarray], b: Sequence[np.ndarray], floor: float = 1e-6) -> float:
    """Largest ``|a - b| / max(|a|, |b|, floor)`` across matching arrays."""
    worst = 0.0
    for x, y in zip(a, b):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if x.size:
            worst = max(worst, float((np.abs(x - y) / denom).max()))
    return worst
