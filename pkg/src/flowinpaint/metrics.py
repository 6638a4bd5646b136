"""Video quality metrics: PSNR, SSIM, flow warping error and temporal consistency.

Frames are ``(N, C, H, W)`` arrays. Pixel values are in [-1, 1], so the
natural PSNR/SSIM peak (dynamic range) is 2.0; callers may pass another.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .flow import FlowPair, backward_warp

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
PEAK = 2.0
LUMA = np.array([0.299, 0.587, 0.114])


def _as_video(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 3 else a


def psnr(a, b, peak: float = PEAK) -> float:
    """Per-frame PSNR in dB averaged over frames; identical frames score ``PSNR_CAP``."""
    a, b = _as_video(a), _as_video(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    if peak <= 0:
        raise ValueError("psnr: peak must be positive")
    mse = ((a - b) ** 2).reshape(a.shape[0], -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        vals = np.where(mse > 0, 10.0 * np.log10(peak * peak / np.maximum(mse, 1e-300)), PSNR_CAP)
    return float(np.minimum(vals, PSNR_CAP).mean())


def luma(frames) -> np.ndarray:
    """(N, 3, H, W) -> (N, H, W); single-channel input passes through."""
    f = _as_video(frames)
    if f.shape[1] == 1:
        return f[:, 0]
    if f.shape[1] != 3:
        raise ValueError(f"luma expects 1 or 3 channels, got {f.shape[1]}")
    return np.tensordot(LUMA, f, axes=([0], [1]))


def ssim(a, b, peak: float = PEAK, window: int = 8, stride: int = 4) -> float:
    """Mean SSIM over 8×8 luma windows (stride 4) and frames."""
    a, b = luma(a), luma(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes {a.shape} and {b.shape} differ")
    H, W = a.shape[-2:]
    if H < window or W < window:
        raise ValueError(f"ssim: frame {H}x{W} is smaller than the {window}x{window} window")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    wa = sliding_window_view(a, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    wb = sliding_window_view(b, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    va = wa.var(axis=(-2, -1))
    vb = wb.var(axis=(-2, -1))
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))
    return float(s.mean())


def warp_error(frames, flow: FlowPair) -> float:
    """Mean squared difference between frame i and frame i+1 warped back by the
    forward flow, over valid (in-frame) pixels of all pairs."""
    f = np.asarray(frames, dtype=np.float32)
    if flow.pairs != f.shape[0] - 1:
        raise ValueError(f"warp_error: {flow.pairs} flow pairs for {f.shape[0]} frames")
    warped, valid = backward_warp(f[1:], flow.forward)
    sq = ((f[:-1].astype(np.float64) - warped) ** 2).mean(axis=1, keepdims=True)
    n = valid.sum()
    return float((sq * valid).sum() / n) if n else 0.0


def temporal_consistency(frames) -> float:
    """Mean cosine similarity of consecutive raw frame vectors."""
    f = _as_video(frames)
    if f.shape[0] < 2:
        raise ValueError("temporal_consistency needs at least 2 frames")
    v = f.reshape(f.shape[0], -1)
    norms = np.linalg.norm(v, axis=1)
    sims = []
    for i in range(len(v) - 1):
        if norms[i] == 0 or norms[i + 1] == 0:
            log.warning("temporal_consistency: zero-norm frame in pair (%d, %d), skipped", i, i + 1)
            continue
        sims.append(float(v[i] @ v[i + 1] / (norms[i] * norms[i + 1])))
    if not sims:
        raise ValueError("temporal_consistency: every frame pair has a zero-norm frame")
    return float(np.mean(sims))


@dataclass
class ClipScore:
    name: str
    psnr: float
    ssim: float
    e_warp: float
    tc: float


@dataclass
class EvalReport:
    clips: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.clips)

    def aggregate(self) -> dict:
        if not self.clips:
            raise ValueError("empty evaluation report")
        return {k: float(np.mean([getattr(c, k) for c in self.clips])) for k in ("psnr", "ssim", "e_warp", "tc")}

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["clip", "psnr", "ssim", "e_warp", "tc"])
            for c in self.clips:
                w.writerow([c.name, f"{c.psnr:.6f}", f"{c.ssim:.6f}", f"{c.e_warp:.8f}", f"{c.tc:.6f}"])
            agg = self.aggregate()
            w.writerow([f"mean({self.count})"] + [f"{agg[k]:.6f}" if k != "e_warp" else f"{agg[k]:.8f}"
                                                  for k in ("psnr", "ssim", "e_warp", "tc")])
        return path


def score_clip(name: str, pred, gt, flow: FlowPair, peak: float = PEAK) -> ClipScore:
    """All four metrics for one clip; E_warp uses the ground-truth flow."""
    return ClipScore(name, psnr(pred, gt, peak), ssim(pred, gt, peak), warp_error(pred, flow),
                     temporal_consistency(pred))


def evaluate(preds: dict, gts: dict, flows: dict, config: dict | None = None) -> EvalReport:
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise ValueError(f"no prediction for clips: {', '.join(missing)}")
    rep = EvalReport(config=dict(config or {}))
    for name in sorted(gts):
        rep.clips.append(score_clip(name, preds[name], gts[name], flows[name]))
    return rep
