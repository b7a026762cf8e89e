"""Command-line entry point: ``selfless run | gradcheck | report``.

Exit codes: 0 success, 1 gradient check failed, 2 invalid config or
missing/corrupt reports, 3 dataset files missing, 4 training diverged.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, dump_config, expand_sweep, load_config, sequence_config
from .datasets import (
    DatasetMissingError,
    SoftBoundarySchedule,
    load_mnist,
    make_permuted_sequence,
    make_synthetic_overlap_sequence,
    merge_into_class_groups,
)
from .gradcheck import TOLERANCE, run_gradcheck
from .metrics import build_report, capacity_snapshot, export_report, load_report
from .nn import DivergenceError
from .trainer import run_sequence, train_soft_boundaries

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("selfless")


def build_tasks(cfg: dict):
    data = cfg["data"]
    seed = data["seed"] if data["seed"] is not None else cfg["train"]["seed"]
    if data["kind"] == "permuted_mnist":
        return make_permuted_sequence(load_mnist(data["root"]), data["n_tasks"], seed)
    return make_synthetic_overlap_sequence(
        data["n_tasks"],
        data["overlap"],
        seed,
        n_classes=data["n_classes"],
        informative=data["informative"],
        n_train=data["n_train"],
        n_test=data["n_test"],
        noise=data["noise"],
    )


def run_dir_for(cfg: dict) -> Path:
    return Path(cfg["output_dir"]) / f"{cfg['experiment']}-{cfg['train']['seed']}"


def execute(cfg: dict) -> dict:
    """Run one fully-specified config and write its reports. Returns the report as a dict."""
    tasks = build_tasks(cfg)
    seq = sequence_config(cfg)
    if cfg["data"]["kind"] == "soft_boundary":
        # the synthetic tasks become class groups of one task with drifting sampling
        task, groups = merge_into_class_groups(tasks, cfg["experiment"])
        schedule = SoftBoundarySchedule(groups, cfg["data"]["steps_per_phase"])
        run = train_soft_boundaries(task, schedule, seq, on_phase_end=lambda state, t: capacity_snapshot(state, t, [task]))
    else:
        run = run_sequence(tasks, seq, on_task_end=lambda state, t: capacity_snapshot(state, t, tasks))
    report = build_report(cfg["experiment"], seq.seed, cfg, run)
    out = run_dir_for(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    for fmt in cfg["formats"]:
        export_report(report, out / f"report.{fmt}", fmt)
    return {"experiment": report.experiment, "accuracies": report.accuracies, "mean": report.mean_accuracy, "dir": str(out)}


def _print_run(summary: dict, stream=None):
    stream = stream or sys.stdout
    accs = summary["accuracies"]
    print(f"{summary['experiment']}  ({summary['dir']})", file=stream)
    print("  " + " ".join(f"T{i + 1:<6d}" for i in range(len(accs))) + " mean", file=stream)
    print("  " + " ".join(f"{100 * a:6.2f} " for a in accs) + f"{100 * summary['mean']:6.2f}", file=stream)


def cmd_run(config_path, overrides=(), jobs: int = 1) -> int:
    try:
        cfg = load_config(config_path, overrides)
        points = expand_sweep(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if jobs > 1 and len(points) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                summaries = list(pool.map(execute, points))
        else:
            summaries = [execute(p) for p in points]
    except DatasetMissingError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    for s in summaries:
        _print_run(s)
    return EXIT_OK


def cmd_gradcheck(seed: int = 0, instances: int = 20, corrupt: str | None = None) -> int:
    results = run_gradcheck(seed, instances, corrupt)
    failed = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.kind:<20s} max rel err {r.max_error:.3e}  ({r.instances} instances)  {status}")
        if not r.passed:
            failed.append(r)
    if failed:
        for r in failed:
            print(f"gradient check failed for {r.kind}: {r.max_error:.3e} >= {TOLERANCE:g}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def _row_label(cfg: dict) -> str:
    train = cfg.get("train", {})
    label = train.get("regularizer", "none")
    label = "no-reg" if label == "none" else label
    if train.get("importance", "mas") != "mas":
        label += f"+{train['importance']}"
    return label


def cmd_report(run_dir) -> int:
    run_dir = Path(run_dir)
    paths = sorted(run_dir.rglob("report.json")) if run_dir.is_dir() else []
    if not paths:
        print(f"no report.json files under {run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        reports = [load_report(p) for p in paths]
    except (ValueError, TypeError) as exc:
        print(f"corrupt report: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    cells = defaultdict(list)
    for r in reports:
        hidden = r.config.get("train", {}).get("hidden", ["?"])[0]
        cells[(_row_label(r.config), hidden)].append(r.mean_accuracy)
    rows = sorted({k[0] for k in cells})
    cols = sorted({k[1] for k in cells}, key=str, reverse=True)

    print("variant".ljust(16) + "".join(f"h={c}".rjust(12) for c in cols))
    for row in rows:
        line = row.ljust(16)
        for col in cols:
            vals = cells.get((row, col))
            line += (f"{100 * np.mean(vals):.2f}" + (f" (n={len(vals)})" if len(vals) > 1 else "")).rjust(12) if vals else "-".rjust(12)
        print(line)

    with (run_dir / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "hidden", "runs", "mean_accuracy"])
        for (row, col), vals in sorted(cells.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
            w.writerow([row, col, len(vals), repr(float(np.mean(vals)))])
    with (run_dir / "free_capacity.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "seed", "lambda_ssl", "task", "free_capacity_layer1"])
        for r in reports:
            lam = r.config.get("train", {}).get("lambda_ssl")
            for t, caps in enumerate(r.free_capacity):
                w.writerow([r.experiment, r.seed, lam, t + 1, repr(caps[0])])
    with (run_dir / "histograms.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "seed", "bin_left", "bin_right", "count"])
        for r in reports:
            if r.histogram:
                e, c = r.histogram["edges"], r.histogram["counts"]
                w.writerows([r.experiment, r.seed, repr(e[i]), repr(e[i + 1]), c[i]] for i in range(len(c)))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfless", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train a task sequence from a config file")
    p.add_argument("config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (dotted or bare), repeatable")
    p.add_argument("--jobs", type=int, default=1, help="parallel processes for sweeps")

    p = sub.add_parser("gradcheck", help="finite-difference check of every penalty and the full objective")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)

    p = sub.add_parser("report", help="summarize the reports under a directory")
    p.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.overrides, args.jobs)
    if args.command == "gradcheck":
        return cmd_gradcheck(args.seed, args.instances)
    return cmd_report(args.run_dir)


if __name__ == "__main__":
    sys.exit(main())
