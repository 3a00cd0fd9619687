"""Two-layer GELU MLP applied row-wise to a sequence of vertex features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

PARAM_NAMES = ("w1", "b1", "w2", "b2")


class ShapeError(ValueError):
    pass


@dataclass
class MlpParams:
    w1: np.ndarray  # (D, Hd)
    b1: np.ndarray  # (Hd,)
    w2: np.ndarray  # (Hd, K)
    b2: np.ndarray  # (K,)

    @property
    def dims(self):
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def tensors(self):
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> "MlpParams":
        return MlpParams(*(t.copy() for t in self.tensors()))

    @classmethod
    def zeros(cls, d: int, hd: int, k: int) -> "MlpParams":
        return cls(np.zeros((d, hd)), np.zeros(hd), np.zeros((hd, k)), np.zeros(k))

    @classmethod
    def zeros_like(cls, other: "MlpParams") -> "MlpParams":
        return cls(*(np.zeros_like(t) for t in other.tensors()))


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    params: MlpParams


def init_params(d: int, hd: int, k: int, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    a1 = np.sqrt(6.0 / (d + hd))
    a2 = np.sqrt(6.0 / (hd + k))
    return MlpParams(
        rng.uniform(-a1, a1, size=(d, hd)),
        np.zeros(hd),
        rng.uniform(-a2, a2, size=(hd, k)),
        np.zeros(k),
    )


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(params: MlpParams, xs) -> ForwardCache:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != params.w1.shape[0]:
        raise ShapeError(f"features {xs.shape} do not match input dim {params.w1.shape[0]}")
    pre = xs @ params.w1 + params.b1
    hidden = gelu(pre)
    out = hidden @ params.w2 + params.b2
    return ForwardCache(xs, pre, hidden, out, params)


def forward(params: MlpParams, xs):
    """Return (probabilities (N, K), cache)."""
    cache = logits(params, xs)
    return softmax(cache.logits), cache


def backward(cache: ForwardCache, dlogits, dgelu=gelu_grad):
    """Reverse pass. Returns (grads as MlpParams, gradient w.r.t. the input rows).

    ``dgelu`` is injectable so the gradient checker can be mutation-tested.
    """
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache.logits.shape:
        raise ShapeError(f"dlogits {dlogits.shape} vs logits {cache.logits.shape}")
    p = cache.params
    gw2 = cache.hidden.T @ dlogits
    gb2 = dlogits.sum(axis=0)
    dhidden = dlogits @ p.w2.T
    dpre = dhidden * dgelu(cache.pre)
    gw1 = cache.x.T @ dpre
    gb1 = dpre.sum(axis=0)
    dx = dpre @ p.w1.T
    return MlpParams(gw1, gb1, gw2, gb2), dx


def predict_labels(probs) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the smaller class index
    return np.argmax(probs, axis=-1)
