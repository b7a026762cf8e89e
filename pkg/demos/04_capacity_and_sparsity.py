"""How inhibition changes what the network uses after one task.

Trains the first permuted MNIST task at a few inhibition strengths and looks
at two things: the share of first-layer weights whose importance is still
negligible (free for later tasks) and the distribution of per-neuron mean
activations (how many units stay silent). Needs the MNIST files; uses a
10k-image subset and 3 epochs so it finishes in a couple of minutes.
"""
# %%
import numpy as np

from selfless.datasets import load_mnist, make_permuted_sequence
from selfless.metrics import activation_histogram, capacity_snapshot
from selfless.trainer import SequenceConfig, run_sequence

data = load_mnist()
(task,) = make_permuted_sequence(data, 1, seed=0)
task.train_x, task.train_y = task.train_x[:10000], task.train_y[:10000]

# %%
rows = []
for lam in (0.0, 1e-5, 1e-4, 1e-3):
    config = SequenceConfig(regularizer="slni", lambda_ssl=lam, epochs=3, batch_size=10)
    run = run_sequence([task], config, on_task_end=lambda s, t: capacity_snapshot(s, t, [task]))
    snap = run.snapshots[0]
    hist = activation_histogram(run.state.model, task.test_inputs())
    rows.append((lam, run.mean_accuracy, snap["free_capacity"][0], hist.zero_bin_mass))

# %% More inhibition: more free capacity, more silent units, similar accuracy until lambda gets large.
print("lambda    accuracy  free-capacity  silent-unit share")
for lam, acc, cap, zero in rows:
    print(f"{lam:<9g} {100 * acc:7.2f}   {cap:12.3f}  {zero:17.3f}")
