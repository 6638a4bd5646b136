"""Multi-scale flow adapter (decoupled cross-attention on flow tokens) and its KV memory bank."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .layers import LayerNorm, Linear
from .tensor import Module, Parameter


class BankError(RuntimeError):
    pass


class AdapterLayer(Module):
    """``hidden + gamma · Attn(norm(hidden)·Wq, flow·Wk, flow·Wv)``; gamma starts at 0."""

    def __init__(self, rng, dim: int, flow_dim: int):
        g = "adapter"
        self.norm = LayerNorm(dim, g)
        self.q = Linear(rng, dim, dim, g, bias=False)
        self.k = Linear(rng, flow_dim, dim, g, bias=False)
        self.v = Linear(rng, flow_dim, dim, g, bias=False)
        self.gamma = Parameter(np.zeros(1, dtype=np.float32), g)
        self.scale = 1.0 / math.sqrt(dim)
        self.projections = 0

    def project(self, feats):
        """(P, h, w, Cf) flow features -> keys and values of shape (P, h*w, dim)."""
        self.projections += 1
        feats = T.as_tensor(feats)
        P, h, w, c = feats.shape
        tokens = feats.reshape(P, h * w, c)
        return self.k(tokens), self.v(tokens)

    def __call__(self, hidden, keys, values, pair_index: np.ndarray):
        """``hidden`` (B, F, h, w, C); ``pair_index`` (F, 2) selects the flow pairs
        each frame attends to (boundary frames repeat their single pair, which
        leaves the softmax average unchanged)."""
        B, F, h, w, C = hidden.shape
        keys, values = T.as_tensor(keys), T.as_tensor(values)
        P, n, _ = keys.shape
        k = keys[pair_index].reshape(F, 2 * n, C)
        v = values[pair_index].reshape(F, 2 * n, C)
        q = self.q(self.norm(hidden)).reshape(B, F, h * w, C)
        a = T.softmax_attention(q, k, v, self.scale).reshape(B, F, h, w, C)
        return hidden + self.gamma * a


class MemoryBank:
    """Write-once per-scale store of adapter keys and values."""

    def __init__(self, scales: int):
        self._entries: list = [None] * scales

    @property
    def scales(self) -> int:
        return len(self._entries)

    @property
    def filled(self) -> list[bool]:
        return [e is not None for e in self._entries]

    def put(self, scale: int, keys: np.ndarray, values: np.ndarray) -> None:
        if self._entries[scale] is not None:
            raise BankError(f"memory bank scale {scale} is already filled")
        k = np.array(keys, dtype=np.float32)
        v = np.array(values, dtype=np.float32)
        k.setflags(write=False)
        v.setflags(write=False)
        self._entries[scale] = (k, v)

    def get(self, scale: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= scale < len(self._entries):
            raise BankError(f"scale index {scale} out of range for {len(self._entries)} scales")
        e = self._entries[scale]
        if e is None:
            raise BankError(f"memory bank scale {scale} has not been filled")
        return e


class FlowAdapter(Module):
    def __init__(self, rng, dims, flow_dims):
        self.layers = [AdapterLayer(rng, d, f) for d, f in zip(dims, flow_dims)]

    @property
    def projection_calls(self) -> list[int]:
        return [layer.projections for layer in self.layers]

    def reset_counters(self) -> None:
        for layer in self.layers:
            layer.projections = 0

    def fill_bank(self, feats, bank: MemoryBank | None = None) -> MemoryBank:
        if len(feats) != len(self.layers):
            raise ValueError(f"expected features for {len(self.layers)} scales, got {len(feats)}")
        bank = bank or MemoryBank(len(self.layers))
        with T.no_grad():
            for i, (layer, f) in enumerate(zip(self.layers, feats)):
                if bank.filled[i]:
                    raise BankError(f"memory bank scale {i} is already filled")
                k, v = layer.project(f)
                bank.put(i, k.data, v.data)
        return bank

    def attend(self, hidden, source, scale_idx: int, pair_index: np.ndarray):
        """Adapter attention at one scale from fresh features or a filled bank."""
        if not 0 <= scale_idx < len(self.layers):
            raise ValueError(f"scale index {scale_idx} out of range for {len(self.layers)} scales")
        layer = self.layers[scale_idx]
        if isinstance(source, MemoryBank):
            k, v = source.get(scale_idx)
        else:
            k, v = layer.project(source[scale_idx])
        return layer(hidden, k, v, pair_index)


def pair_index(real_frames, pairs: int) -> np.ndarray:
    """(F, 2) indices of the flow pairs adjacent to each real frame index."""
    r = np.asarray(real_frames, dtype=np.int64)
    if pairs < 1:
        raise ValueError("adapter needs at least one flow pair")
    left = np.clip(r - 1, 0, pairs - 1)
    right = np.clip(r, 0, pairs - 1)
    return np.stack([left, right], axis=1)
