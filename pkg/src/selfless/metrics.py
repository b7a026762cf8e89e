"""Accuracy, free capacity, activation histograms and report export."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import Mlp, forward

REPORT_VERSION = 1
HIST_BINS = 50


def evaluate_accuracy(model: Mlp, inputs: np.ndarray, labels: np.ndarray, batch_size: int = 2048) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits = forward(model, inputs[start : start + batch_size]).logits
        correct += int((logits.argmax(axis=1) == labels[start : start + batch_size]).sum())
    return correct / len(labels)


def free_capacity_fraction(omega, threshold: float = 1e-2, layer: int = 0) -> float:
    """Share of a layer's weights whose accumulated importance is below ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    w = omega.weights[layer]
    return float((w < threshold).mean())


def free_capacity_by_layer(omega, threshold: float = 1e-2) -> list[float]:
    return [free_capacity_fraction(omega, threshold, l) for l in range(len(omega.weights))]


@dataclass
class Histogram:
    edges: list[float]
    counts: list[int]

    @property
    def zero_bin_mass(self) -> float:
        return self.counts[0] / sum(self.counts)


def mean_activation_per_neuron(model: Mlp, inputs: np.ndarray, layer: int = 0, batch_size: int = 2048) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise ValueError("need at least one example")
    total = None
    for start in range(0, inputs.shape[0], batch_size):
        h = forward(model, inputs[start : start + batch_size]).post[layer].sum(axis=0)
        total = h if total is None else total + h
    return total / inputs.shape[0]


def activation_histogram(model: Mlp, inputs: np.ndarray, layer: int = 0, bins: int = HIST_BINS) -> Histogram:
    """Histogram of per-neuron mean activations, fixed-width bins on ``[0, max]``."""
    means = mean_activation_per_neuron(model, inputs, layer)
    top = float(means.max())
    lo = min(0.0, float(means.min()))
    if top <= lo:
        top = lo + 1.0
    counts, edges = np.histogram(means, bins=bins, range=(lo, top))
    return Histogram(edges.tolist(), counts.astype(int).tolist())


def capacity_snapshot(state, task_index: int, tasks, threshold: float = 1e-2) -> dict:
    """Per-task bookkeeping for reports: free capacity after each task, histogram after the first."""
    snap = {
        "task": task_index + 1,
        "free_capacity": free_capacity_by_layer(state.omega, threshold),
        "alpha": [a.tolist() for a in state.alpha.alpha],
    }
    if task_index == 0:
        hist = activation_histogram(state.model, tasks[0].test_inputs(), layer=0)
        snap["histogram"] = asdict(hist)
    return snap


@dataclass
class EvalReport:
    experiment: str
    seed: int
    config: dict
    accuracies: list[float]
    mean_accuracy: float
    tasks: list[dict] = field(default_factory=list)
    free_capacity: list[list[float]] = field(default_factory=list)
    histogram: dict | None = None
    alpha: list[list[float]] = field(default_factory=list)
    version: int = REPORT_VERSION

    def __post_init__(self):
        if self.accuracies and abs(self.mean_accuracy - float(np.mean(self.accuracies))) > 1e-12:
            raise ValueError("mean_accuracy does not match the per-task accuracies")


def build_report(experiment: str, seed: int, config: dict, run) -> EvalReport:
    """Assemble a report from a ``SequenceRun`` whose snapshots came from ``capacity_snapshot``."""
    snaps = run.snapshots
    hist = next((s["histogram"] for s in snaps if "histogram" in s), None)
    return EvalReport(
        experiment=experiment,
        seed=int(seed),
        config=config,
        accuracies=[float(a) for a in run.final_accuracies],
        mean_accuracy=float(np.mean(run.final_accuracies)),
        tasks=[r.to_dict() for r in run.results],
        free_capacity=[s["free_capacity"] for s in snaps],
        histogram=hist,
        alpha=snaps[-1]["alpha"] if snaps else [],
    )


CSV_METRICS = ("final_accuracy", "accuracy_when_learned", "train_loss", "free_capacity_layer1")


def _csv_rows(report: EvalReport):
    for t, acc in enumerate(report.accuracies):
        info = report.tasks[t] if t < len(report.tasks) else {}
        cap = report.free_capacity[t][0] if t < len(report.free_capacity) else float("nan")
        values = (acc, info.get("test_accuracy", float("nan")), info.get("train_loss", float("nan")), cap)
        for metric, value in zip(CSV_METRICS, values):
            yield t + 1, metric, repr(float(value))


def export_report(report: EvalReport, path, fmt: str = "json") -> list[Path]:
    """Write ``report``; CSV also writes a ``<stem>.histogram.csv`` sidecar. Returns written paths."""
    path = Path(path)
    try:
        if fmt == "json":
            path.write_text(json.dumps(asdict(report), indent=2, sort_keys=True) + "\n")
            return [path]
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["task", "metric", "value"])
                w.writerows(_csv_rows(report))
            side = path.with_name(path.stem + ".histogram.csv")
            with side.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["bin_left", "bin_right", "count"])
                if report.histogram:
                    e, c = report.histogram["edges"], report.histogram["counts"]
                    w.writerows((repr(e[i]), repr(e[i + 1]), c[i]) for i in range(len(c)))
            return [path, side]
    except OSError as exc:
        raise OSError(f"could not write report to {path}: {exc}") from exc
    raise ValueError(f"unknown report format {fmt!r}")


def load_report(path) -> EvalReport:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read report {path}: {exc}") from exc
    if data.get("version") != REPORT_VERSION:
        raise ValueError(f"{path}: unsupported report version {data.get('version')!r}")
    return EvalReport(**data)
