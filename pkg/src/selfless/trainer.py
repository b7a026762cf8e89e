"""Sequential training: cross-entropy + importance-weighted anchor + representation penalty."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import regularizers as reg
from .datasets import SoftBoundarySchedule, Task, class_pools, sample_soft_batch
from .importance import (
    NeuronImportance,
    ParamImportance,
    accumulate_importance,
    neuron_importance,
    parameter_importance,
)
from .metrics import evaluate_accuracy
from .nn import Batch, DenseLayer, DivergenceError, Gradients, Mlp, backward, forward, sgd_step, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass
class SequenceConfig:
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    activation: str = "relu"
    window: int = 2
    regularizer: str = "none"
    lambda_ssl: float = 0.0
    sigma_fraction: float = 1.0 / 6.0
    importance: str = "mas"
    lambda_omega: float = 1.0
    epochs: int = 10
    learning_rate: float = 1e-2
    batch_size: int = 128
    seed: int = 0
    multi_head: bool = False
    neuron_mode: str | None = None

    def __post_init__(self):
        if self.lambda_ssl < 0 or self.lambda_omega < 0:
            raise ValueError("lambda_ssl and lambda_omega must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.regularizer not in reg.KINDS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}; expected one of {reg.KINDS}")
        if self.importance not in ("mas", "ewc"):
            raise ValueError(f"unknown importance method {self.importance!r}")
        if self.sigma_fraction <= 0:
            raise ValueError("sigma_fraction must be positive")
        if self.activation == "maxout" and reg.is_discounted(self.regularizer):
            raise ValueError("discounted regularizers need one importance per hidden output; not available with maxout")
        self.hidden = [int(h) for h in self.hidden]

    @property
    def alpha_mode(self) -> str:
        # MAS pairs with function-gradient neuron importance, EWC with loss-gradient
        if self.neuron_mode is not None:
            return self.neuron_mode
        return "function" if self.importance == "mas" else "loss"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TaskResult:
    task_id: int
    name: str
    train_loss: float
    test_accuracy: float
    seen_accuracies: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SequenceState:
    model: Mlp
    anchor: list[np.ndarray]
    omega: ParamImportance
    alpha: NeuronImportance
    task_index: int = 0
    heads: dict = field(default_factory=dict)
    active_head: int | None = None
    history: list = field(default_factory=list)
    # reusable work arrays for the anchor term; avoids two large allocations per step
    _scratch: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def fresh(cls, input_dim: int, n_classes: int, config: SequenceConfig) -> "SequenceState":
        model = Mlp.init([input_dim, *config.hidden, n_classes], config.activation, config.window, config.seed)
        return cls(
            model=model,
            anchor=[p.copy() for p in model.params()],
            omega=ParamImportance.zeros(model, config.importance),
            alpha=NeuronImportance.zeros(model),
        )

    def use_head(self, task_id: int, config: SequenceConfig) -> None:
        """Swap in the output layer owned by ``task_id``, creating it on first use."""
        if self.active_head is not None:
            self.heads[self.active_head] = self.model.layers[-1]
        if task_id not in self.heads:
            rng = np.random.default_rng([config.seed, 7919, task_id])
            proto = self.model.layers[-1]
            limit = np.sqrt(6.0 / (proto.fan_in + proto.fan_out))
            self.heads[task_id] = DenseLayer(rng.uniform(-limit, limit, proto.weights.shape), np.zeros(proto.fan_out))
        self.model.layers[-1] = self.heads[task_id]
        self.active_head = task_id


def _penalized_layers(model: Mlp, config: SequenceConfig) -> range:
    return range(len(model.layers) - 1 if config.multi_head else len(model.layers))


def _sigma(width: int, config: SequenceConfig) -> float:
    return width * config.sigma_fraction


def representation_penalty(state: SequenceState, record, config: SequenceConfig):
    """Sum of the configured activation penalty over hidden layers; per-layer gradients."""
    total, grads = 0.0, []
    for l, H in enumerate(record.post):
        alpha = state.alpha.alpha[l] if reg.is_discounted(config.regularizer) else None
        pen = reg.activation_penalty(config.regularizer, H, alpha=alpha, sigma=_sigma(H.shape[1], config))
        total += pen.value
        grads.append(pen.activation_grad)
    return total, grads


def anchor_penalty(state: SequenceState, config: SequenceConfig, into: Gradients | None = None, scale: float = 1.0):
    """``sum_k omega_k (theta_k - anchor_k)^2`` and its gradient (unscaled by lambda).

    With ``into`` the gradient, times ``scale``, is added to those arrays in place
    and they are returned; this keeps the per-step cost to a couple of passes.
    """
    value = 0.0
    grads = Gradients.zeros_like(state.model) if into is None else into
    glist = grads.as_list()
    params = state.model.params()
    omegas = state.omega.as_list()
    for l in _penalized_layers(state.model, config):
        for k in (2 * l, 2 * l + 1):
            diff, w = _work_arrays(state, k, params[k].shape)
            np.subtract(params[k], state.anchor[k], out=diff)
            np.multiply(omegas[k], diff, out=w)
            value += float(np.vdot(w, diff))
            w *= 2.0 * scale
            glist[k] += w
    return value, grads


def _work_arrays(state: SequenceState, k: int, shape) -> tuple[np.ndarray, np.ndarray]:
    pair = state._scratch.get(k)
    if pair is None or pair[0].shape != shape:
        pair = state._scratch[k] = (np.empty(shape), np.empty(shape))
    return pair


def compose_objective(state: SequenceState, batch: Batch, config: SequenceConfig):
    """Total loss and exact gradient of CE + lambda_omega * anchor + lambda_ssl * penalty."""
    model = state.model
    record = forward(model, batch)
    ce, d_logits = softmax_cross_entropy(record.logits, batch.labels)
    total = ce
    injected = None
    kind = config.regularizer
    if config.lambda_ssl > 0 and kind in reg.ACTIVATION_KINDS:
        value, act_grads = representation_penalty(state, record, config)
        total += config.lambda_ssl * value
        injected = [config.lambda_ssl * g for g in act_grads]
    grads = backward(model, record, d_logits, injected)
    if config.lambda_ssl > 0 and kind in reg.PARAMETER_KINDS:
        pen = reg.parameter_penalty(kind, model)
        total += config.lambda_ssl * pen.value
        grads = grads + pen.param_grads.scaled(config.lambda_ssl)
    if config.lambda_omega > 0 and state.task_index > 0:
        value, grads = anchor_penalty(state, config, into=grads, scale=config.lambda_omega)
        total += config.lambda_omega * value
    return total, grads, ce


def _check_finite(loss: float, config: SequenceConfig, where: str):
    if not np.isfinite(loss):
        raise DivergenceError(
            f"non-finite loss during {where} (lambda_ssl={config.lambda_ssl:g}, "
            f"lambda_omega={config.lambda_omega:g}, learning_rate={config.learning_rate:g})"
        )


def _sgd_update(state: SequenceState, batch: Batch, config: SequenceConfig, where: str) -> float:
    # overflow on the way to divergence is reported by _check_finite, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        total, grads, _ = compose_objective(state, batch, config)
    _check_finite(total, config, where)
    # the gradients are ours to scale in place, which saves an allocation per parameter
    if not grads.is_finite():
        raise DivergenceError(f"non-finite gradient during {where}; lower the learning rate or the regularization strength")
    for p, g in zip(state.model.params(), grads.as_list()):
        g *= config.learning_rate
        p -= g
    return total


def _train_epochs(state: SequenceState, task: Task, config: SequenceConfig) -> float:
    n = task.n_train
    epoch_loss = float("nan")
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, state.task_index, epoch])
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            batch = Batch(task.train_inputs(rows), task.train_y[rows])
            total = _sgd_update(state, batch, config, f"task {state.task_index + 1} epoch {epoch + 1}")
            running += total * len(rows)
        epoch_loss = running / n
        log.debug("task %d epoch %d loss %.5f", state.task_index + 1, epoch + 1, epoch_loss)
    return epoch_loss


def consolidate(state: SequenceState, inputs: np.ndarray, labels: np.ndarray, config: SequenceConfig) -> None:
    """Estimate importances on the given data, accumulate them and move the anchor."""
    model = state.model
    omega = parameter_importance(model, inputs, labels, config.importance, config.batch_size)
    alpha = neuron_importance(model, inputs, labels, config.alpha_mode, config.batch_size)
    state.omega = accumulate_importance(state.omega, omega)
    state.alpha = accumulate_importance(state.alpha, alpha)
    state.anchor = [p.copy() for p in model.params()]


def evaluate_seen(state: SequenceState, tasks: Sequence[Task], config: SequenceConfig) -> list[float]:
    accs = []
    active = state.active_head
    for t, task in enumerate(tasks):
        if config.multi_head:
            state.use_head(t, config)
        accs.append(evaluate_accuracy(state.model, task.test_inputs(), task.test_y))
    if config.multi_head and active is not None:
        state.use_head(active, config)
    return accs


def train_task(state: SequenceState, task: Task, config: SequenceConfig, seen: Sequence[Task] = ()):
    """Train on ``task``, consolidate, then evaluate ``seen`` (which should end with ``task``)."""
    if task.input_dim != state.model.input_size:
        raise ValueError(f"task input width {task.input_dim} != model input {state.model.input_size}")
    if config.multi_head:
        state.use_head(state.task_index, config)
    loss = _train_epochs(state, task, config)
    consolidate(state, task.train_inputs(), task.train_y, config)
    seen = list(seen) or [task]
    accs = evaluate_seen(state, seen, config)
    result = TaskResult(state.task_index + 1, task.name, loss, accs[-1], accs)
    state.task_index += 1
    state.history.append(result)
    log.info("task %d (%s): acc %.4f, seen %s", result.task_id, task.name, result.test_accuracy,
             " ".join(f"{a:.4f}" for a in accs))
    return state, result


@dataclass
class SequenceRun:
    results: list[TaskResult]
    final_accuracies: list[float]
    state: SequenceState
    snapshots: list[dict] = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.final_accuracies))


def run_sequence(tasks: Sequence[Task], config: SequenceConfig, on_task_end=None) -> SequenceRun:
    """Train the tasks in order on one network. ``on_task_end(state, t)`` may record extra metrics."""
    if not tasks:
        raise ValueError("need at least one task")
    n_classes = max(t.n_classes for t in tasks)
    state = SequenceState.fresh(tasks[0].input_dim, n_classes, config)
    results, snapshots = [], []
    for t, task in enumerate(tasks):
        _, result = train_task(state, task, config, tasks[: t + 1])
        results.append(result)
        if on_task_end is not None:
            snapshots.append(on_task_end(state, t))
    return SequenceRun(results, results[-1].seen_accuracies, state, snapshots)


@dataclass
class SoftBoundaryRun:
    results: list[TaskResult]
    final_accuracies: list[float]
    state: SequenceState
    snapshots: list[dict] = field(default_factory=list)

    @property
    def group_model_accuracies(self) -> list[float]:
        return [r.test_accuracy for r in self.results]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.final_accuracies))


def _group_accuracy(model: Mlp, task: Task, classes) -> float:
    rows = np.isin(task.test_y, classes)
    return evaluate_accuracy(model, task.test_inputs()[rows], task.test_y[rows])


def train_soft_boundaries(
    task: Task, schedule: SoftBoundarySchedule, config: SequenceConfig, on_phase_end=None
) -> SoftBoundaryRun:
    """Train one shared head while the class distribution drifts phase by phase.

    Importances are re-estimated at the end of each phase on the examples
    drawn during it. With ``lambda_omega = 0`` no anchor penalty is applied
    but neuron importance still discounts the inhibition. Accuracies are
    reported per class group; ``on_phase_end(state, phase)`` may record extras.
    """
    if schedule.n_classes > task.n_classes:
        raise ValueError(f"schedule covers {schedule.n_classes} classes but the task has {task.n_classes}")
    state = SequenceState.fresh(task.input_dim, task.n_classes, config)
    pools = class_pools(task.train_y, task.n_classes)
    rng = np.random.default_rng([config.seed, 104729])
    results, snapshots = [], []
    for phase in range(schedule.n_phases):
        seen_rows, losses = [], []
        for s in range(schedule.steps_per_phase):
            step = phase * schedule.steps_per_phase + s
            rows = sample_soft_batch(schedule, step, pools, config.batch_size, rng)
            seen_rows.append(rows)
            batch = Batch(task.train_inputs(rows), task.train_y[rows])
            losses.append(_sgd_update(state, batch, config, f"phase {phase + 1}"))
        rows = np.unique(np.concatenate(seen_rows))
        consolidate(state, task.train_inputs(rows), task.train_y[rows], config)
        state.task_index += 1
        accs = [_group_accuracy(state.model, task, g) for g in schedule.groups[: phase + 1]]
        results.append(TaskResult(phase + 1, f"phase-{phase + 1}", float(np.mean(losses)), accs[-1], accs))
        if on_phase_end is not None:
            snapshots.append(on_phase_end(state, phase))
    final = [_group_accuracy(state.model, task, g) for g in schedule.groups]
    return SoftBoundaryRun(results, final, state, snapshots)


def select_lambda_ssl(first_task_accuracy: dict[float, float], baseline: float, tolerance: float = 0.005) -> float:
    """Strongest penalty whose first-task accuracy stays within ``tolerance`` of ``baseline``.

    ``first_task_accuracy`` maps candidate lambdas to the test accuracy reached
    on task 1 with that lambda; ``baseline`` is the unregularized accuracy.
    Falls back to the weakest candidate when none qualifies.
    """
    if not first_task_accuracy:
        raise ValueError("need at least one candidate lambda")
    if any(lam <= 0 for lam in first_task_accuracy):
        raise ValueError("candidate lambdas must be positive")
    ok = [lam for lam, acc in first_task_accuracy.items() if acc >= baseline - tolerance]
    return max(ok) if ok else min(first_task_accuracy)
