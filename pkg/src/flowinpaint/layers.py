"""Building blocks on top of the tensor core. Activations are channels-last."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Module, Parameter


def _init(rng: np.random.Generator, shape, fan_in: int, zero: bool = False) -> np.ndarray:
    if zero:
        return np.zeros(shape, dtype=np.float32)
    return (rng.standard_normal(shape) / math.sqrt(fan_in)).astype(np.float32)


class Linear(Module):
    def __init__(self, rng, cin: int, cout: int, group: str, bias: bool = True, zero: bool = False):
        self.w = Parameter(_init(rng, (cin, cout), cin, zero), group)
        self.b = Parameter(np.zeros(cout, dtype=np.float32), group) if bias else None

    def __call__(self, x):
        return T.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim: int, group: str):
        self.w = Parameter(np.ones(dim, dtype=np.float32), group)
        self.b = Parameter(np.zeros(dim, dtype=np.float32), group)

    def __call__(self, x):
        return T.layer_norm(x, self.w, self.b)


class Conv3(Module):
    def __init__(self, rng, cin: int, cout: int, group: str, zero: bool = False):
        self.w = Parameter(_init(rng, (9 * cin, cout), 9 * cin, zero), group)
        self.b = Parameter(np.zeros(cout, dtype=np.float32), group)

    def __call__(self, x):
        return T.conv3x3(x, self.w, self.b)


class ResMixer(Module):
    """Pre-norm residual 3×3 conv, optionally modulated by a timestep embedding.

    Input ``(..., H, W, cin)``; the timestep embedding, when used, has shape
    ``(B, temb_dim)`` and the input's leading axis is B.
    """

    def __init__(self, rng, cin: int, cout: int, group: str, temb_dim: int | None = None):
        self.norm = LayerNorm(cin, group)
        self.conv = Conv3(rng, cin, cout, group)
        self.skip = Linear(rng, cin, cout, group, bias=False) if cin != cout else None
        self.temb = Linear(rng, temb_dim, cout, group) if temb_dim else None

    def __call__(self, x, temb=None):
        y = self.conv(T.silu(self.norm(x)))
        if self.temb is not None:
            if temb is None:
                raise ValueError("ResMixer built with a timestep projection needs temb")
            e = self.temb(T.silu(temb))
            y = y + e.reshape((e.shape[0],) + (1,) * (y.ndim - 2) + (e.shape[1],))
        h = x if self.skip is None else self.skip(x)
        return h + y


class Attention(Module):
    """Residual pre-norm attention: ``x + Wo · softmax(q kᵀ/√d) v``.

    Self-attention when ``context`` is None, otherwise cross-attention with
    keys and values projected from ``context``.
    """

    def __init__(self, rng, dim: int, group: str, context_dim: int | None = None,
                 zero_out: bool = False):
        cdim = context_dim or dim
        self.norm = LayerNorm(dim, group)
        self.q = Linear(rng, dim, dim, group, bias=False)
        self.k = Linear(rng, cdim, dim, group, bias=False)
        self.v = Linear(rng, cdim, dim, group, bias=False)
        self.o = Linear(rng, dim, dim, group, zero=zero_out)
        self.scale = 1.0 / math.sqrt(dim)

    def __call__(self, x, context=None):
        h = self.norm(x)
        ctx = h if context is None else context
        a = T.softmax_attention(self.q(h), self.k(ctx), self.v(ctx), self.scale)
        return x + self.o(a)


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding, ``t`` of shape (B,) -> (B, dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1).astype(np.float32)


def patchify(x, p: int = 2):
    """(B, F, C, H, W) array -> (B, F, H/p, W/p, p*p*C) tensor."""
    x = T.as_tensor(x)
    B, F, C, H, W = x.shape
    if H % p or W % p:
        raise T.ShapeError(f"patchify: spatial dims of {x.shape} not divisible by {p}")
    y = x.reshape(B, F, C, H // p, p, W // p, p)
    y = y.transpose(0, 1, 3, 5, 4, 6, 2)
    return y.reshape(B, F, H // p, W // p, p * p * C)


def unpatchify(x, C: int, p: int = 2):
    """Inverse of :func:`patchify`."""
    B, F, h, w, _ = x.shape
    y = x.reshape(B, F, h, w, p, p, C)
    y = y.transpose(0, 1, 6, 2, 4, 3, 5)
    return y.reshape(B, F, C, h * p, w * p)
