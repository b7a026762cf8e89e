"""Inhibition penalties on a handful of activation vectors.

Run with ``python demos/01_inhibition_penalties.py``. Nothing is trained;
the point is to see what each penalty rewards.
"""
# %%
import numpy as np

from selfless import regularizers as reg

np.set_printoptions(precision=3, suppress=True)

# Three examples over six hidden units. The first row has a single active
# unit, the second two neighbours, the third two units far apart.
H = np.array(
    [
        [0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ]
)

# %% Global inhibition charges every co-active pair the same.
for row in H:
    print(row, "sni =", reg.r_sni(row[None]).value)

# %% The Gaussian kernel makes the charge fade with index distance.
kernel = reg.LocalityKernel(6, sigma=1.0)
print(kernel.weights)
for row in H:
    print(row, "slni =", round(reg.r_slni(row[None], kernel).value, 4))

# Neighbours (row 2) still pay; distant units (row 3) almost do not. Groups
# of nearby units are pushed apart while far-apart units may fire together.

# %% Discounting exempts units that earlier tasks depend on.
alpha = np.array([0.0, 3.0, 3.0, 0.0, 0.0, 0.0])
print("alpha", alpha)
for row in H:
    plain = reg.r_slni(row[None], kernel).value
    disc = reg.r_slnid(row[None], kernel, alpha).value
    print(row, f"slni = {plain:.4f}  slnid = {disc:.4f}")

# Row 2 uses the two important units, so its penalty all but vanishes.

# %% Gradients point at the units that should calm down.
pen = reg.r_slni(H, kernel)
print("value", round(pen.value, 4))
print(pen.activation_grad)

# %% The baselines for comparison, on the same batch.
for kind in ("l1rep", "decov"):
    print(kind, round(reg.activation_penalty(kind, H).value, 4))
