import csv
import json

import numpy as np
import pytest

from selfless.importance import ParamImportance
from selfless.metrics import (
    CSV_METRICS,
    EvalReport,
    Histogram,
    activation_histogram,
    build_report,
    capacity_snapshot,
    evaluate_accuracy,
    export_report,
    free_capacity_by_layer,
    free_capacity_fraction,
    load_report,
    mean_activation_per_neuron,
)
from selfless.nn import DenseLayer, Mlp


def identity_model(n=3):
    return Mlp([DenseLayer(np.eye(n), np.zeros(n)), DenseLayer(np.eye(n), np.zeros(n))], "relu")


def test_accuracy_counts_argmax():
    x = np.array([[3.0, 0, 0], [0, 2, 0], [0, 0, 1], [1, 0, 0]])
    assert evaluate_accuracy(identity_model(), x, [0, 1, 2, 2]) == 0.75
    assert evaluate_accuracy(identity_model(), x, [0, 1, 2, 2], batch_size=1) == 0.75


def test_accuracy_empty():
    with pytest.raises(ValueError):
        evaluate_accuracy(identity_model(), np.zeros((0, 3)), [])


def test_free_capacity():
    omega = ParamImportance([np.array([[0.0, 0.5], [0.001, 2.0]])], [np.zeros(2)], "mas")
    assert free_capacity_fraction(omega, 1e-2) == 0.5
    assert free_capacity_fraction(omega, 1.0) == 0.75
    assert free_capacity_by_layer(omega) == [0.5]
    with pytest.raises(ValueError):
        free_capacity_fraction(omega, 0.0)


def test_mean_activation_and_histogram():
    x = np.array([[1.0, -1, 0], [3.0, -1, 0]])
    means = mean_activation_per_neuron(identity_model(), x, batch_size=1)
    np.testing.assert_allclose(means, [2.0, 0.0, 0.0])
    hist = activation_histogram(identity_model(), x, bins=4)
    assert hist.edges[0] == 0.0 and hist.edges[-1] == 2.0
    assert hist.counts == [2, 0, 0, 1]
    assert hist.zero_bin_mass == pytest.approx(2 / 3)


def test_histogram_all_dead():
    hist = activation_histogram(identity_model(), -np.ones((4, 3)), bins=5)
    assert sum(hist.counts) == 3 and hist.zero_bin_mass == 1.0


class _Run:
    def __init__(self, accs):
        from selfless.trainer import TaskResult

        self.final_accuracies = accs
        self.results = [TaskResult(t + 1, f"t{t}", 0.1 * t, 0.9, accs[: t + 1]) for t in range(len(accs))]
        self.snapshots = [
            {"task": 1, "free_capacity": [0.5, 0.6], "alpha": [[0.0]], "histogram": {"edges": [0.0, 0.5, 1.0], "counts": [3, 1]}},
            {"task": 2, "free_capacity": [0.4, 0.5], "alpha": [[1.0]]},
        ][: len(accs)]


@pytest.fixture
def report():
    return build_report("demo", 3, {"lambda_ssl": 1e-4}, _Run([0.9, 0.8]))


def test_build_report(report):
    assert report.mean_accuracy == pytest.approx(0.85)
    assert report.free_capacity == [[0.5, 0.6], [0.4, 0.5]]
    assert report.histogram["counts"] == [3, 1]
    assert report.alpha == [[1.0]]


def test_mean_must_match():
    with pytest.raises(ValueError):
        EvalReport("x", 0, {}, [0.5, 0.7], 0.8)


def test_json_round_trip(tmp_path, report):
    (path,) = export_report(report, tmp_path / "r.json")
    assert load_report(path) == report
    assert json.loads(path.read_text())["version"] == 1


def test_csv_export(tmp_path, report):
    main, side = export_report(report, tmp_path / "r.csv", "csv")
    rows = list(csv.DictReader(main.open()))
    assert len(rows) == 2 * len(CSV_METRICS)
    final = {int(r["task"]): float(r["value"]) for r in rows if r["metric"] == "final_accuracy"}
    assert final == {1: 0.9, 2: 0.8}
    assert side.name == "r.histogram.csv"
    hist = list(csv.reader(side.open()))
    assert hist[0] == ["bin_left", "bin_right", "count"] and hist[1] == ["0.0", "0.5", "3"]


def test_unknown_format(tmp_path, report):
    with pytest.raises(ValueError):
        export_report(report, tmp_path / "r.x", "xml")


def test_unwritable(tmp_path, report):
    with pytest.raises(OSError, match="could not write"):
        export_report(report, tmp_path / "missing" / "r.json")


def test_version_mismatch(tmp_path, report):
    (path,) = export_report(report, tmp_path / "r.json")
    data = json.loads(path.read_text())
    data["version"] = 99
    path.write_text(json.dumps(data))
    with pytest.raises(ValueError, match="version"):
        load_report(path)


def test_unreadable(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ValueError):
        load_report(tmp_path / "bad.json")


def test_capacity_snapshot():
    from selfless.datasets import make_synthetic_overlap_sequence
    from selfless.trainer import SequenceConfig, run_sequence

    tasks = make_synthetic_overlap_sequence(2, 0.5, seed=0, n_train=100, n_test=50)
    config = SequenceConfig(hidden=[8, 8], epochs=1, batch_size=10)
    run = run_sequence(tasks, config, on_task_end=lambda s, t: capacity_snapshot(s, t, tasks))
    first, second = run.snapshots
    assert "histogram" in first and "histogram" not in second
    assert sum(first["histogram"]["counts"]) == 8
    assert len(first["free_capacity"]) == 3
    assert all(b <= a for a, b in zip(first["free_capacity"], second["free_capacity"]))
    assert isinstance(Histogram(**first["histogram"]).zero_bin_mass, float)
