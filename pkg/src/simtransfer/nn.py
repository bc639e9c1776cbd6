"""Small feedforward classifiers in numpy: dense and strided-conv layers,
softmax cross-entropy, Adam with global-norm clipping.

Parameters are a flat list of arrays so gradient checks and serialisation
can walk them uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int


@dataclass(frozen=True)
class Architecture:
    """``input_dim`` features per sample. With ``conv`` set, each sample is
    reshaped to ``input_shape = (C, H, W)`` before the conv stack."""

    input_dim: int
    num_classes: int
    hidden_sizes: tuple = (56, 56)
    conv: tuple = ()
    input_shape: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden_sizes": list(self.hidden_sizes),
            "conv": [[c.out_channels, c.kernel, c.stride] for c in self.conv],
            "input_shape": list(self.input_shape) if self.input_shape else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(int(d["input_dim"]), int(d["num_classes"]), tuple(d["hidden_sizes"]),
                   tuple(ConvSpec(*c) for c in d.get("conv", [])),
                   tuple(d["input_shape"]) if d.get("input_shape") else None)

    def shapes(self) -> list[tuple]:
        shapes = []
        if self.conv:
            c, h, w = self.input_shape
            for spec in self.conv:
                shapes += [(spec.out_channels, c, spec.kernel, spec.kernel), (spec.out_channels,)]
                h = (h - spec.kernel) // spec.stride + 1
                w = (w - spec.kernel) // spec.stride + 1
                if h < 1 or w < 1:
                    raise ValueError("conv stack shrinks the input below one cell")
                c = spec.out_channels
            width = c * h * w
        else:
            width = self.input_dim
        for n in self.hidden_sizes:
            shapes += [(width, n), (n,)]
            width = n
        shapes += [(width, self.num_classes), (self.num_classes,)]
        return shapes


def init_params(arch: Architecture, rng: np.random.Generator) -> list[np.ndarray]:
    """Symmetric uniform init scaled by fan-in, for weights and biases alike."""
    params = []
    shapes = arch.shapes()
    for i in range(0, len(shapes), 2):
        w_shape, b_shape = shapes[i], shapes[i + 1]
        fan_in = int(np.prod(w_shape[1:])) if len(w_shape) == 4 else w_shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=w_shape))
        params.append(rng.uniform(-bound, bound, size=b_shape))
    return params


def _conv_forward(x, w, b, stride):
    k = w.shape[2]
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (N, C, Ho, Wo, k, k)
    out = np.einsum("nchwij,fcij->nfhw", windows, w, optimize=True) + b[None, :, None, None]
    return out, windows


def _conv_backward(grad, x_shape, windows, w, stride):
    k = w.shape[2]
    dw = np.einsum("nfhw,nchwij->fcij", grad, windows, optimize=True)
    db = grad.sum(axis=(0, 2, 3))
    dx = np.zeros(x_shape)
    Ho, Wo = grad.shape[2], grad.shape[3]
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += \
                np.einsum("nfhw,fc->nchw", grad, w[:, :, i, j], optimize=True)
    return dx, dw, db


def forward(arch: Architecture, params: Sequence[np.ndarray], X: np.ndarray, keep: bool = False):
    """Logits for a batch. With ``keep`` also returns the activation cache."""
    cache = []
    h = X
    p = 0
    if arch.conv:
        h = X.reshape((X.shape[0],) + tuple(arch.input_shape))
        for spec in arch.conv:
            z, windows = _conv_forward(h, params[p], params[p + 1], spec.stride)
            cache.append(("conv", h.shape, windows, z))
            h = np.maximum(z, 0)
            p += 2
        h = h.reshape(h.shape[0], -1)
    for _ in arch.hidden_sizes:
        z = h @ params[p] + params[p + 1]
        cache.append(("dense", h, z))
        h = np.maximum(z, 0)
        p += 2
    cache.append(("out", h))
    logits = h @ params[p] + params[p + 1]
    return (logits, cache) if keep else logits


def nll_and_grad(arch: Architecture, params: Sequence[np.ndarray], X: np.ndarray, y: np.ndarray):
    """Mean negative log-likelihood of ``y`` and its gradient w.r.t. ``params``."""
    logits, cache = forward(arch, params, X, keep=True)
    logp = log_softmax(logits)
    n = X.shape[0]
    loss = -logp[np.arange(n), y].mean()
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    g /= n
    grads = [None] * len(params)
    p = len(params) - 2
    _, h = cache[-1]
    grads[p], grads[p + 1] = h.T @ g, g.sum(axis=0)
    g = g @ params[p].T
    conv_shape = None
    for entry in reversed(cache[:-1]):
        p -= 2
        if entry[0] == "dense":
            _, h_in, z = entry
            g = g * (z > 0)
            grads[p], grads[p + 1] = h_in.T @ g, g.sum(axis=0)
            g = g @ params[p].T
        else:
            _, x_shape, windows, z = entry
            if conv_shape is None:
                g = g.reshape(z.shape)
                conv_shape = True
            g = g * (z > 0)
            g, grads[p], grads[p + 1] = _conv_backward(g, x_shape, windows, params[p], arch.conv[p // 2].stride)
    return float(loss), grads


def predict_proba(arch: Architecture, params, X: np.ndarray) -> np.ndarray:
    return softmax(forward(arch, params, X))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        return [g * scale for g in grads]
    return grads


@dataclass
class Adam:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
