"""Optical flow: corruption under masks, the flow-completion branch, warping, flow loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear, LayerNorm, ResMixer, patchify, unpatchify
from .tensor import Module


@dataclass
class FlowPair:
    forward: np.ndarray     # (N-1, 2, H, W), frame i -> i+1, channels (dx, dy)
    backward: np.ndarray    # (N-1, 2, H, W), frame i+1 -> i

    @property
    def pairs(self) -> int:
        return self.forward.shape[0]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.forward, self.backward], axis=1)

    @classmethod
    def from_stacked(cls, arr: np.ndarray) -> "FlowPair":
        arr = np.asarray(arr, dtype=np.float32)
        return cls(np.ascontiguousarray(arr[:, :2]), np.ascontiguousarray(arr[:, 2:]))


@dataclass
class CompletedFlow:
    flow: FlowPair
    validity: np.ndarray    # (N-1, 1, H, W) forward-backward consistency in [0, 1]
    hole: np.ndarray        # (N-1, 1, H, W) 1 inside the union hole


# -- warping ------------------------------------------------------------------
def backward_warp(x, flow):
    """Bilinearly sample ``x`` at ``p + flow(p)``.

    ``x`` is ``(..., C, H, W)`` and ``flow`` ``(..., 2, H, W)`` in pixels with
    channels (dx, dy). Returns the warped array and a ``(..., 1, H, W)``
    validity map that is 0 where the sample point leaves the frame; there the
    output keeps the unwarped value of ``x`` at ``p``.
    """
    x = np.asarray(x, dtype=np.float32)
    flow = np.asarray(flow, dtype=np.float32)
    H, W = x.shape[-2:]
    if flow.shape[-3] != 2 or flow.shape[-2:] != (H, W):
        raise ValueError(f"backward_warp: flow {flow.shape} does not match frames {x.shape}")
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float32)
    sx = xs + flow[..., 0, :, :]
    sy = ys + flow[..., 1, :, :]
    valid = (sx >= 0) & (sx <= W - 1) & (sy >= 0) & (sy <= H - 1)
    sx = np.clip(sx, 0, W - 1)
    sy = np.clip(sy, 0, H - 1)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (sx - x0).astype(np.float32)[..., None, :, :]
    fy = (sy - y0).astype(np.float32)[..., None, :, :]

    lead = np.broadcast_shapes(x.shape[:-3], flow.shape[:-3])
    xb = np.broadcast_to(x, lead + x.shape[-3:])
    nb = int(np.prod(lead)) if lead else 1
    C = x.shape[-3]
    flat = xb.reshape(nb, C, H * W)

    def gather(yi, xi):
        idx = np.broadcast_to(yi * W + xi, lead + (H, W)).reshape(nb, 1, H * W)
        return np.take_along_axis(flat, np.broadcast_to(idx, (nb, C, H * W)), axis=2).reshape(
            lead + (C, H, W))

    top = gather(y0, x0) * (1 - fx) + gather(y0, x1) * fx
    bot = gather(y1, x0) * (1 - fx) + gather(y1, x1) * fx
    out = top * (1 - fy) + bot * fy
    v = valid[..., None, :, :]
    out = np.where(v, out, xb).astype(np.float32)
    return out, v.astype(np.float32)


def union_hole(m: np.ndarray) -> np.ndarray:
    """(N, 1, H, W) known-region mask -> (N-1, 1, H, W) hole of either frame in each pair."""
    m = np.asarray(m, dtype=np.float32)
    return np.maximum(1.0 - m[:-1], 1.0 - m[1:]).astype(np.float32)


def estimate_corrupted_flow(v_m: np.ndarray, m: np.ndarray, flow: FlowPair) -> tuple[FlowPair, np.ndarray]:
    """Stand-in for a flow estimator run on masked frames.

    ``flow`` is the reference flow (ground truth, or an externally estimated
    flow loaded from file); it is zeroed on the union hole of each pair.
    Returns the corrupted flow and the hole map.
    """
    v_m = np.asarray(v_m)
    if v_m.shape[0] < 2:
        raise ValueError(f"flow needs at least 2 frames, got {v_m.shape[0]}")
    if flow.pairs != v_m.shape[0] - 1:
        raise ValueError(f"flow has {flow.pairs} pairs for {v_m.shape[0]} frames")
    hole = union_hole(m)
    keep = 1.0 - hole
    return FlowPair((flow.forward * keep).astype(np.float32), (flow.backward * keep).astype(np.float32)), hole


# -- completion branch ------------------------------------------------------------
class FlowBranch(Module):
    """Timestep-free encoder-decoder mirroring the denoiser's block layout with
    one conv mixer per block. Input per frame pair: [fwd 2 | bwd 2 | hole 1].

    Emits the composited completed flow and one feature map per up block, with
    channel counts equal to the denoiser's up-block widths.
    """

    def __init__(self, rng, widths=(32, 64, 128), patch: int = 2):
        g = "flow_branch"
        self.patch = patch
        self.widths = tuple(widths)
        w0, w1, w2 = widths
        self.stem = Linear(rng, 5 * patch * patch, w0, g)
        self.enc = [ResMixer(rng, w0, w0, g), ResMixer(rng, w0, w1, g), ResMixer(rng, w1, w2, g)]
        self.mid = ResMixer(rng, w2, w2, g)
        self.dec = [ResMixer(rng, 2 * w2, w2, g), ResMixer(rng, w2 + w1, w1, g), ResMixer(rng, w1 + w0, w0, g)]
        self.head_norm = LayerNorm(w0, g)
        self.head = Linear(rng, w0, 4 * patch * patch, g, zero=True)
        self.calls = 0

    @property
    def feature_channels(self) -> tuple:
        return self.widths[::-1]

    def __call__(self, corrupted: np.ndarray, hole: np.ndarray):
        """``corrupted`` (P, 4, H, W), ``hole`` (P, 1, H, W) -> (flow tensor (P, 4, H, W), features)."""
        self.calls += 1
        corrupted = np.asarray(corrupted, dtype=np.float32)
        hole = np.asarray(hole, dtype=np.float32)
        x = np.concatenate([corrupted, hole], axis=1)[None]
        h = self.stem(patchify(x, self.patch))[0]         # (P, h, w, w0)
        skips = []
        for i, blk in enumerate(self.enc):
            if i:
                h = T.avg_pool2(h)
            h = blk(h)
            skips.append(h)
        h = self.mid(h)
        feats = []
        for i, blk in enumerate(self.dec):
            if i:
                h = T.upsample2(h)
            h = blk(T.concat([h, skips[-1 - i]], axis=-1))
            feats.append(h)
        out = self.head(T.silu(self.head_norm(h)))
        pred = unpatchify(out[None], 4, self.patch)[0]     # (P, 4, H, W)
        completed = pred * hole + corrupted * (1.0 - hole)
        return completed, feats


def fb_consistency(fwd: np.ndarray, bwd: np.ndarray) -> np.ndarray:
    """Soft forward-backward consistency weight in [0, 1], zero where the forward
    target leaves the frame."""
    bwd_at, valid = backward_warp(bwd, fwd)
    err = ((fwd + bwd_at) ** 2).sum(axis=-3, keepdims=True)
    return (valid * np.exp(-err)).astype(np.float32)


def complete_flow(branch: FlowBranch, corrupted: FlowPair, m: np.ndarray):
    """Inference-time completion: returns (CompletedFlow, features as arrays)."""
    hole = union_hole(m)
    with T.no_grad():
        out, feats = branch(corrupted.stacked(), hole)
    flow = FlowPair.from_stacked(out.data)
    validity = fb_consistency(flow.forward, flow.backward)
    return CompletedFlow(flow, validity, hole), [f.data for f in feats]


def flow_loss(pred, gt):
    """Mean L1 between stacked (P, 4, H, W) flows; tensors in, tensor out."""
    pred = pred.flow.stacked() if isinstance(pred, CompletedFlow) else pred
    gt = gt.stacked() if isinstance(gt, FlowPair) else gt
    pred, gt = T.as_tensor(pred), T.as_tensor(gt)
    if pred.shape != gt.shape:
        raise T.ShapeError(f"flow_loss: shapes {pred.shape} and {gt.shape} differ")
    return T.mean(T.abs_(pred - gt))


def combined_loss(diff, flow, lam: float):
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return diff + flow * float(lam)


def endpoint_error(pred: FlowPair, gt: FlowPair) -> np.ndarray:
    """Per-pixel EPE for both directions, shape (P, 2, H, W)."""
    f = np.sqrt(((pred.forward - gt.forward) ** 2).sum(axis=1))
    b = np.sqrt(((pred.backward - gt.backward) ** 2).sum(axis=1))
    return np.stack([f, b], axis=1)
