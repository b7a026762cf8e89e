"""Five small tasks in a row, with and without discounted inhibition.

Each task is a 4-way Gaussian-blob problem over ten input dimensions; eight
of the ten are shared between tasks, so later tasks want to reuse features
the earlier ones rely on. Runs in well under a minute.
"""
# %%
import numpy as np

from selfless.datasets import make_synthetic_overlap_sequence
from selfless.trainer import SequenceConfig, run_sequence

tasks = make_synthetic_overlap_sequence(n_tasks=5, overlap=0.8, seed=0)
print([t.name for t in tasks], "input width", tasks[0].input_dim)

base = dict(hidden=[32, 32], epochs=10, batch_size=10, learning_rate=0.01, lambda_omega=1.0, multi_head=True)

# %% Train the same sequence three ways.
runs = {
    "no-reg": run_sequence(tasks, SequenceConfig(**base)),
    "slni": run_sequence(tasks, SequenceConfig(**base, regularizer="slni", lambda_ssl=1e-2)),
    "slnid": run_sequence(tasks, SequenceConfig(**base, regularizer="slnid", lambda_ssl=1e-2)),
}

# %% Accuracy on every task once the whole sequence is done.
print("variant   " + "".join(f"T{i + 1:<7d}" for i in range(len(tasks))) + "mean")
for name, run in runs.items():
    print(f"{name:<10s}" + "".join(f"{100 * a:<8.2f}" for a in run.final_accuracies) + f"{100 * run.mean_accuracy:.2f}")

# %% Forgetting: accuracy right after learning a task minus accuracy at the end.
for name, run in runs.items():
    learned = np.array([r.test_accuracy for r in run.results])
    print(f"{name:<10s} mean forgetting {100 * (learned - run.final_accuracies).mean():.2f} points")

# %% Neuron importance after the last task, first hidden layer.
alpha = runs["slnid"].state.alpha.alpha[0]
print("alpha quantiles (10/50/90%):", np.round(np.quantile(alpha, [0.1, 0.5, 0.9]), 3))
