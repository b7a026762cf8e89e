"""Activation and parameter penalties with analytic gradients.

The inhibition family (``sni``, ``snid``, ``slni``, ``slnid``) penalizes
co-activation of distinct neurons in a hidden layer::

    R(H) = 1/M * sum_{i != j} w_ij * exp(-(a_i + a_j)) * sum_m h_i^m h_j^m

with ``w_ij`` a Gaussian of the index distance (``slni``/``slnid``) or 1
(``sni``/``snid``), and ``a`` the neuron importances (zero for the
non-discounted variants). The sum runs over ordered pairs, so each unordered
pair is counted twice. Gradients are exact derivatives of the value.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .nn import Gradients, Mlp, ShapeError

INHIBITION_KINDS = ("sni", "snid", "slni", "slnid")
ACTIVATION_KINDS = INHIBITION_KINDS + ("l1rep", "decov")
PARAMETER_KINDS = ("l1param", "l2wd", "orthreg")
KINDS = ("none",) + ACTIVATION_KINDS + PARAMETER_KINDS

ORTH_EPS = 1e-12


@dataclass
class RegPenalty:
    value: float
    activation_grad: np.ndarray | None = None
    param_grads: Gradients | None = None


def is_local(kind: str) -> bool:
    return kind in ("slni", "slnid")


def is_discounted(kind: str) -> bool:
    return kind in ("snid", "slnid")


def gaussian_locality_weight(i, j, sigma: float):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = np.asarray(i, dtype=np.float64) - np.asarray(j, dtype=np.float64)
    return np.exp(-(d * d) / (2.0 * sigma * sigma))


class LocalityKernel:
    """Pairwise Gaussian weights over neuron indices, diagonal zeroed, no wrap-around."""

    def __init__(self, n: int, sigma: float):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.n = int(n)
        self.sigma = float(sigma)
        self.weights = _kernel_matrix(self.n, self.sigma)

    @classmethod
    def uniform(cls, n: int) -> "LocalityKernel":
        """All off-diagonal weights 1: reduces the local penalty to global inhibition."""
        k = cls.__new__(cls)
        k.n, k.sigma = int(n), float("inf")
        k.weights = _uniform_matrix(int(n))
        return k

    def __repr__(self):
        return f"LocalityKernel(n={self.n}, sigma={self.sigma:g})"


@lru_cache(maxsize=32)
def _kernel_matrix(n: int, sigma: float) -> np.ndarray:
    idx = np.arange(n)
    w = gaussian_locality_weight(idx[:, None], idx[None, :], sigma)
    np.fill_diagonal(w, 0.0)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=32)
def _uniform_matrix(n: int) -> np.ndarray:
    w = np.ones((n, n))
    np.fill_diagonal(w, 0.0)
    w.setflags(write=False)
    return w


def _weighted_inhibition(H: np.ndarray, weights: np.ndarray) -> RegPenalty:
    m = H.shape[0]
    HW = H @ weights
    value = float(np.einsum("mi,mi->", HW, H)) / m
    grad = (HW + H @ weights.T) / m
    return RegPenalty(value, activation_grad=grad)


def r_sni(H: np.ndarray) -> RegPenalty:
    """Global inhibition. Zero iff each row has at most one nonzero entry (for H >= 0)."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    return _weighted_inhibition(H, LocalityKernel.uniform(H.shape[1]).weights)


def r_slni(H: np.ndarray, kernel: LocalityKernel) -> RegPenalty:
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if H.shape[1] != kernel.n:
        raise ShapeError(f"kernel size {kernel.n} != layer width {H.shape[1]}")
    return _weighted_inhibition(H, kernel.weights)


def r_slnid(H: np.ndarray, kernel: LocalityKernel, alpha: np.ndarray) -> RegPenalty:
    """Local inhibition with pairs involving important neurons discounted by exp(-(a_i + a_j))."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    alpha = np.asarray(alpha, dtype=np.float64)
    if H.shape[1] != kernel.n or alpha.shape != (kernel.n,):
        raise ShapeError(f"layer width {H.shape[1]}, kernel {kernel.n}, alpha {alpha.shape} disagree")
    if (alpha < 0).any():
        raise ValueError("neuron importance must be non-negative")
    if not alpha.any():
        return _weighted_inhibition(H, kernel.weights)
    d = np.exp(-alpha)
    return _weighted_inhibition(H, d[:, None] * kernel.weights * d[None, :])


def r_l1rep(H: np.ndarray) -> RegPenalty:
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    m = H.shape[0]
    return RegPenalty(float(np.abs(H).sum()) / m, activation_grad=np.sign(H) / m)


def r_decov(H: np.ndarray) -> RegPenalty:
    """Half the squared Frobenius norm of the batch covariance, diagonal excluded."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    m = H.shape[0]
    Hc = H - H.mean(axis=0, keepdims=True)
    C = Hc.T @ Hc / m
    off = C - np.diag(np.diag(C))
    value = 0.5 * float((off * off).sum())
    # columns of Hc sum to zero, so the centering step passes the gradient through unchanged
    return RegPenalty(value, activation_grad=(2.0 / m) * Hc @ off)


def activation_penalty(kind: str, H: np.ndarray, alpha=None, sigma: float | None = None) -> RegPenalty:
    """Dispatch for penalties on a hidden layer's post-activations.

    ``sigma`` defaults to a sixth of the layer width for the local kinds.
    ``alpha`` is ignored by the non-discounted kinds.
    """
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    n = H.shape[1]
    if kind == "l1rep":
        return r_l1rep(H)
    if kind == "decov":
        return r_decov(H)
    if kind not in INHIBITION_KINDS:
        raise ValueError(f"{kind!r} is not an activation penalty")
    if is_local(kind):
        kernel = LocalityKernel(n, sigma if sigma is not None else n / 6.0)
    else:
        kernel = LocalityKernel.uniform(n)
    if is_discounted(kind) and alpha is not None:
        return r_slnid(H, kernel, alpha)
    if kind in ("sni", "snid"):
        return r_sni(H)
    return r_slni(H, kernel)


def _orthreg_layer(W: np.ndarray) -> tuple[float, np.ndarray]:
    norms = np.sqrt((W * W).sum(axis=1) + ORTH_EPS)
    U = W / norms[:, None]
    S = U @ U.T
    off = S - np.diag(np.diag(S))
    value = 0.5 * float((off * off).sum())
    gU = 2.0 * off @ U
    radial = (W * gU).sum(axis=1) / norms**3
    gW = gU / norms[:, None] - W * radial[:, None]
    return value, gW


def parameter_penalty(kind: str, model: Mlp) -> RegPenalty:
    """Penalties on the weight matrices of every layer; biases are left alone."""
    grads = Gradients.zeros_like(model)
    value = 0.0
    for l, layer in enumerate(model.layers):
        W = layer.weights
        if kind == "l1param":
            value += float(np.abs(W).sum())
            grads.d_weights[l] = np.sign(W)
        elif kind == "l2wd":
            value += 0.5 * float((W * W).sum())
            grads.d_weights[l] = W.copy()
        elif kind == "orthreg":
            v, g = _orthreg_layer(W)
            value += v
            grads.d_weights[l] = g
        else:
            raise ValueError(f"{kind!r} is not a parameter penalty")
    return RegPenalty(value, param_grads=grads)
