"""The permuted MNIST sequence from a bundled config, and its No-Reg baseline.

Needs the MNIST IDX files; point ``SELFLESS_DATA_ROOT`` at the directory.
The full run takes several minutes per variant on one core. Pass ``quick``
as the first argument to train each task for one epoch on 10k images.
"""
# %%
import sys

import numpy as np

from selfless.cli import build_tasks
from selfless.config import load_config, sequence_config
from selfless.trainer import run_sequence

quick = len(sys.argv) > 1 and sys.argv[1] == "quick"
cfg = load_config("configs/permuted_mnist_slnid_h128.yaml", ["epochs=1"] if quick else [])
tasks = build_tasks(cfg)
if quick:
    for t in tasks:
        t.train_x, t.train_y = t.train_x[:10000], t.train_y[:10000]
print(len(tasks), "tasks,", tasks[0].n_train, "training images each")

# %% SLNID with the tuned lambda, then the same config with lambda_ssl = 0.
results = {}
for name, lam in (("slnid", cfg["train"]["lambda_ssl"]), ("no-reg", 0.0)):
    config = sequence_config(cfg)
    config.lambda_ssl = lam
    results[name] = run_sequence(tasks, config)

# %% Rows: accuracy on each task after training the last one.
for name, run in results.items():
    print(f"{name:<8s}", " ".join(f"{100 * a:6.2f}" for a in run.final_accuracies), f" mean {100 * run.mean_accuracy:.2f}")

# %% Where the first task ends up as the sequence goes on.
for name, run in results.items():
    print(f"{name:<8s} task-1 accuracy after each task:", np.round([100 * r.seen_accuracies[0] for r in run.results], 2))
