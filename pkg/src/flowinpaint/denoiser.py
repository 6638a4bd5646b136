"""Video noise-prediction network for inpainting.

A three-level encoder-decoder over 2×2-patch tokens of the packed input
``[z_t | mask | z_masked]``. Every block runs: conv mixer (timestep
modulated) -> spatial self-attention -> condition cross-attention ->
[flow adapter, up blocks only] -> temporal attention across frames.

Parameter groups: ``spatial`` (mixers, spatial attention, stem, head,
timestep MLP), ``condition`` (class embeddings and cross-attention),
``motion`` (temporal attention and frame-position embeddings), ``adapter``.
The flow branch lives in :mod:`flowinpaint.flow` and is attached here so a
single checkpoint holds the whole model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .adapter import FlowAdapter, MemoryBank, pair_index
from .flow import FlowBranch
from .layers import Attention, LayerNorm, Linear, ResMixer, patchify, timestep_embedding, unpatchify
from .tensor import Module, Parameter

STAGE_GROUPS = {
    0: ("spatial", "condition"),
    1: ("motion",),
    2: ("motion", "flow_branch", "adapter"),
}


@dataclass
class DenoiserInput:
    z_t: np.ndarray          # (B, F, C, h, w) or (F, C, h, w)
    m_lat: np.ndarray        # (B, F, 1, h, w) or (F, 1, h, w), 1 = known
    z_masked: np.ndarray     # same shape as z_t
    t: object                # int or (B,) ints
    cond: object             # class id(s); the null id selects the unconditional embedding
    frame_idx: np.ndarray | None = None   # positions in the full clip, default arange(F)
    anchor: bool = False     # frame position 0 is a prepended anchor copy of real frame 0

    def packed(self) -> np.ndarray:
        z, m, zm = (np.asarray(a, dtype=np.float32) for a in (self.z_t, self.m_lat, self.z_masked))
        if z.ndim == 4:
            z, m, zm = z[None], m[None], zm[None]
        if not np.isin(m, (0.0, 1.0)).all():
            raise ValueError("m_lat must be binary")
        return np.concatenate([z, m, zm], axis=2)


class TemporalAttention(Module):
    """Self-attention across the frame axis at each spatial location."""

    def __init__(self, rng, dim: int, max_frames: int = 64):
        self.pos = Parameter(np.zeros((max_frames, dim), dtype=np.float32), "motion")
        self.attn = Attention(rng, dim, "motion", zero_out=True)

    def __call__(self, x, frame_idx=None):
        B, F, h, w, C = x.shape
        idx = np.arange(F) if frame_idx is None else np.asarray(frame_idx)
        y = x + self.pos[idx].reshape(1, F, 1, 1, C)
        y = y.transpose(0, 2, 3, 1, 4).reshape(B, h * w, F, C)
        z = self.attn.norm(y)
        a = T.softmax_attention(self.attn.q(z), self.attn.k(z), self.attn.v(z), self.attn.scale)
        a = self.attn.o(a).reshape(B, h, w, F, C).transpose(0, 3, 1, 2, 4)
        return x + a


class Block(Module):
    def __init__(self, rng, cin: int, cout: int, temb_dim: int, cond_dim: int):
        self.mixer = ResMixer(rng, cin, cout, "spatial", temb_dim)
        self.spatial = Attention(rng, cout, "spatial")
        self.cross = Attention(rng, cout, "condition", context_dim=cond_dim)
        self.temporal = TemporalAttention(rng, cout)

    def __call__(self, h, temb, cond, frame_idx, adapter=None):
        h = self.mixer(h, temb)
        B, F, hh, ww, C = h.shape
        h = self.spatial(h.reshape(B, F, hh * ww, C)).reshape(B, F, hh, ww, C)
        ctx = cond.reshape(cond.shape[0], 1, cond.shape[1], cond.shape[2])
        h = self.cross(h.reshape(B, F, hh * ww, C), ctx).reshape(B, F, hh, ww, C)
        if adapter is not None:
            h = adapter(h)
        return self.temporal(h, frame_idx)


class VideoDenoiser(Module):
    def __init__(self, seed: int = 0, channels: int = 3, widths=(32, 64, 128), num_classes: int = 8,
                 cond_tokens: int = 4, cond_dim: int = 64, temb_dim: int = 128, patch: int = 2):
        rng = np.random.default_rng(seed)
        self.channels = channels
        self.patch = patch
        self.widths = tuple(widths)
        self.num_classes = num_classes
        w0, w1, w2 = widths
        self.stem = Linear(rng, (2 * channels + 1) * patch * patch, w0, "spatial")
        self.temb1 = Linear(rng, 64, temb_dim, "spatial")
        self.temb2 = Linear(rng, temb_dim, temb_dim, "spatial")
        self.cond_table = Parameter(
            (rng.standard_normal((num_classes + 1, cond_tokens, cond_dim)) * 0.5).astype(np.float32), "condition")
        self.down = [Block(rng, w0, w0, temb_dim, cond_dim), Block(rng, w0, w1, temb_dim, cond_dim),
                     Block(rng, w1, w2, temb_dim, cond_dim)]
        self.mid = Block(rng, w2, w2, temb_dim, cond_dim)
        self.up = [Block(rng, 2 * w2, w2, temb_dim, cond_dim), Block(rng, w2 + w1, w1, temb_dim, cond_dim),
                   Block(rng, w1 + w0, w0, temb_dim, cond_dim)]
        self.head_norm = LayerNorm(w0, "spatial")
        self.head = Linear(rng, w0, channels * patch * patch, "spatial", zero=True)
        self.flow_branch = FlowBranch(rng, widths, patch)
        self.adapter = FlowAdapter(rng, (w2, w1, w0), self.flow_branch.feature_channels)
        self.use_adapter = True
        self.frame_forwards = 0
        self.stage = None

    @property
    def null_class(self) -> int:
        return self.num_classes

    @property
    def depth(self) -> int:
        return len(self.widths)

    def set_stage(self, stage: int) -> None:
        """Stage 0 pretrains the per-frame image model (stands in for a pretrained
        base); stage 1 trains motion layers only; stage 2 adds flow branch and adapter."""
        if stage not in STAGE_GROUPS:
            raise ValueError(f"unknown training stage {stage!r}; expected one of {sorted(STAGE_GROUPS)}")
        self.set_trainable(STAGE_GROUPS[stage])
        self.stage = stage

    def trainable_groups(self) -> set[str]:
        return {name for name, g in self.param_groups().items() if g.trainable}

    def forward(self, inp: DenoiserInput, flow_feats=None, bank: MemoryBank | None = None,
                pairs: int | None = None):
        """Predicted noise, shape of ``inp.z_t``.

        ``flow_feats`` are per-scale (P, h, w, C) features from the flow branch;
        ``bank`` holds their projected keys/values. One of them is required
        when the adapter is enabled.
        """
        x = inp.packed()
        B, F, Cin, H, W = x.shape
        if Cin != 2 * self.channels + 1:
            raise T.ShapeError(f"denoiser expects {2 * self.channels + 1} packed channels, got {Cin}")
        mult = self.patch * 2 ** (self.depth - 1)
        if H % mult or W % mult:
            raise T.ShapeError(f"spatial size {H}x{W} must be divisible by {mult}")
        if self.use_adapter and flow_feats is None and bank is None:
            raise ValueError("flow adapter enabled: pass flow_feats or a filled memory bank")
        self.frame_forwards += B * F

        t = np.broadcast_to(np.asarray(inp.t).reshape(-1), (B,))
        temb = self.temb2(T.silu(self.temb1(timestep_embedding(t, 64))))
        cls = np.broadcast_to(np.asarray(inp.cond, dtype=np.int64).reshape(-1), (B,))
        if (cls < 0).any() or (cls > self.num_classes).any():
            raise ValueError(f"condition ids must be in [0, {self.num_classes}]")
        cond = self.cond_table[cls]
        frame_idx = np.arange(F) if inp.frame_idx is None else np.asarray(inp.frame_idx)

        adapters = [None] * len(self.up)
        if self.use_adapter:
            real = np.maximum(frame_idx - 1, 0) if inp.anchor else frame_idx
            if pairs is None:
                pairs = bank.get(0)[0].shape[0] if bank is not None else flow_feats[0].shape[0]
            pidx = pair_index(real, pairs)
            source = bank if bank is not None else flow_feats
            adapters = [(lambda h, s=s: self.adapter.attend(h, source, s, pidx)) for s in range(len(self.up))]

        h = self.stem(patchify(x, self.patch))
        skips = []
        for i, blk in enumerate(self.down):
            if i:
                h = T.avg_pool2(h)
            h = blk(h, temb, cond, frame_idx)
            skips.append(h)
        h = self.mid(h, temb, cond, frame_idx)
        for i, blk in enumerate(self.up):
            if i:
                h = T.upsample2(h)
            h = blk(T.concat([h, skips[-1 - i]], axis=-1), temb, cond, frame_idx, adapters[i])
        out = self.head(T.silu(self.head_norm(h)))
        eps = unpatchify(out, self.channels, self.patch)
        if np.asarray(inp.z_t).ndim == 4:
            eps = eps.reshape(eps.shape[1:])
        return eps

    __call__ = forward


def count_parameters(model: Module) -> dict[str, int]:
    out = {}
    for name, g in model.param_groups().items():
        out[name] = int(sum(p.size for p in g.params))
    return out

