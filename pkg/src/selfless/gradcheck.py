"""Finite-difference verification of every penalty and of the composed training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import regularizers as reg
from .importance import NeuronImportance, ParamImportance
from .nn import Batch, Mlp, finite_difference_gradient, forward, max_relative_error

TOLERANCE = 1e-4
STEP = 1e-5
CHECKED_KINDS = ("sni", "snid", "slni", "slnid", "l1rep", "decov", "l1param", "l2wd", "orthreg")


@dataclass
class CheckResult:
    kind: str
    max_error: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _fd_matrix(fn, X: np.ndarray, step: float = STEP) -> np.ndarray:
    g = np.zeros_like(X)
    for idx in np.ndindex(*X.shape):
        orig = X[idx]
        X[idx] = orig + step
        up = fn(X)
        X[idx] = orig - step
        down = fn(X)
        X[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def _random_activations(rng, kind: str) -> np.ndarray:
    m, n = rng.integers(2, 7), rng.integers(2, 7)
    H = rng.random((m, n)) * 2.0
    H[rng.random((m, n)) < 0.3] = 0.0
    if kind == "l1rep":
        # the L1 kink sits at 0; keep every entry well away from it
        H = np.where(H == 0.0, -0.5 - rng.random((m, n)), H + 0.1)
    return H


def check_activation_penalty(kind: str, rng, corrupt: bool = False) -> float:
    H = _random_activations(rng, kind)
    n = H.shape[1]
    alpha = rng.random(n) * 2.0
    sigma = max(n / 6.0, 0.5)

    def value(X):
        return reg.activation_penalty(kind, X, alpha=alpha, sigma=sigma).value

    analytic = reg.activation_penalty(kind, H, alpha=alpha, sigma=sigma).activation_grad
    if corrupt:
        analytic = analytic * 1.01 + 1e-3
    return max_relative_error([analytic], [_fd_matrix(value, H.copy())])


def _random_model(rng, activation: str = "relu") -> Mlp:
    n_layers = int(rng.integers(2, 4))
    window = 2
    sizes = [int(rng.integers(2, 7))]
    for _ in range(n_layers - 1):
        sizes.append(2 * int(rng.integers(1, 5)))
    sizes.append(int(rng.integers(2, 5)))
    model = Mlp.init(sizes, activation, window, rng)
    for layer in model.layers:
        layer.biases[...] = 0.1 * rng.standard_normal(layer.biases.shape)
    return model


def check_parameter_penalty(kind: str, rng, corrupt: bool = False) -> float:
    model = _random_model(rng)
    if kind == "l1param":
        for layer in model.layers:
            w = layer.weights
            w[np.abs(w) < 0.05] += 0.1
    analytic = reg.parameter_penalty(kind, model).param_grads.as_list()
    if corrupt:
        analytic = [a * 1.01 + 1e-3 for a in analytic]
    fd = finite_difference_gradient(lambda m: reg.parameter_penalty(kind, m).value, model, STEP)
    return max_relative_error(analytic, fd.as_list())


KINK_MARGIN = 1e-3


def _kink_distance(model: Mlp, inputs: np.ndarray) -> float:
    """How far the pre-activations sit from a ReLU zero or an LWTA tie.

    Central differences straddling a kink disagree with the one-sided
    analytic gradient, so checked inputs keep clear of them.
    """
    rec = forward(model, inputs)
    worst = np.inf
    for pre in rec.pre:
        if model.activation == "relu":
            worst = min(worst, float(np.abs(pre).min()))
        else:
            top2 = np.sort(pre.reshape(pre.shape[0], -1, model.window), axis=2)[..., -2:]
            worst = min(worst, float((top2[..., 1] - top2[..., 0]).min()))
    return worst


def check_objective(kind: str, rng, corrupt: bool = False) -> float:
    """Full objective on a random model at a non-trivial anchor, with random importances."""
    from .trainer import SequenceConfig, SequenceState, compose_objective

    activation = "lwta" if rng.random() < 0.3 else "relu"
    model = _random_model(rng, activation)
    cfg = SequenceConfig(
        hidden=[l.fan_out for l in model.layers[:-1]],
        activation=activation,
        regularizer=kind,
        lambda_ssl=float(rng.uniform(0.05, 1.0)),
        lambda_omega=float(rng.uniform(0.1, 5.0)),
    )
    state = SequenceState(
        model=model,
        anchor=[p + 0.1 * rng.standard_normal(p.shape) for p in model.params()],
        omega=ParamImportance(
            [rng.random(l.weights.shape) for l in model.layers],
            [rng.random(l.biases.shape) for l in model.layers],
        ),
        alpha=NeuronImportance([rng.random(l.fan_out) for l in model.layers[:-1]]),
        task_index=1,
    )
    m = int(rng.integers(3, 8))
    batch = Batch(rng.random((m, model.input_size)), rng.integers(0, model.n_classes, m))
    for _ in range(100):
        if _kink_distance(model, batch.inputs) > KINK_MARGIN:
            break
        batch = Batch(rng.random((m, model.input_size)), rng.integers(0, model.n_classes, m))
    _, grads, _ = compose_objective(state, batch, cfg)
    analytic = grads.as_list()
    if corrupt:
        analytic = [a * 1.01 + 1e-3 for a in analytic]
    fd = finite_difference_gradient(lambda _: compose_objective(state, batch, cfg)[0], model, STEP)
    return max_relative_error(analytic, fd.as_list())


def run_gradcheck(seed: int = 0, instances: int = 20, corrupt: str | None = None) -> list[CheckResult]:
    """One result per penalty kind plus ``objective:<kind>`` for the composed loss.

    ``corrupt`` names a kind whose analytic gradient is deliberately perturbed
    (a negative control for the checker itself).
    """
    rng = np.random.default_rng(seed)
    results = []
    for kind in CHECKED_KINDS:
        check = check_parameter_penalty if kind in reg.PARAMETER_KINDS else check_activation_penalty
        errs = [check(kind, rng, corrupt == kind) for _ in range(instances)]
        results.append(CheckResult(kind, max(errs), instances))
    for kind in ("none",) + CHECKED_KINDS:
        name = f"objective:{kind}"
        errs = [check_objective(kind, rng, corrupt == name) for _ in range(instances)]
        results.append(CheckResult(name, max(errs), instances))
    return results
