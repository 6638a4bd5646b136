"""Efficiency benchmark (variant table) and the speed-up-step sweep.

Each variant toggles one inference mechanism on top of the previous one:

    baseline-no-flow   adapters and flow completion off
    flow-every-step    flow branch and adapter K/V projections at every step
    flow-first-step    flow completed once, K/V still projected every step
    +interpolation     latent interpolation over the first S steps
    +cache             flow K/V from the memory bank (the full pipeline)

Timings are medians over repeated runs after a warm-up, taken with BLAS
pinned to one thread.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics
from .sampler import SampleResult, Sampler, SamplerConfig
from .synth import Sample

VARIANTS = ("baseline-no-flow", "flow-every-step", "flow-first-step", "+interpolation", "+cache")
SPEEDUP_REFERENCE = "flow-every-step"


def variant_config(name: str, base: SamplerConfig) -> SamplerConfig:
    flags = {
        "baseline-no-flow": dict(use_flow=False, use_interpolation=False, use_cache=False, flow_every_step=False),
        "flow-every-step": dict(use_flow=True, use_interpolation=False, use_cache=False, flow_every_step=True),
        "flow-first-step": dict(use_flow=True, use_interpolation=False, use_cache=False, flow_every_step=False),
        "+interpolation": dict(use_flow=True, use_interpolation=True, use_cache=False, flow_every_step=False),
        "+cache": dict(use_flow=True, use_interpolation=True, use_cache=True, flow_every_step=False),
    }
    if name not in flags:
        raise ValueError(f"unknown bench variant {name!r}; expected one of {VARIANTS}")
    return dataclasses.replace(base, **flags[name])


def run_sample(model, schedule, config: SamplerConfig, s: Sample, anchor: bool = True) -> SampleResult:
    """Inpaint one synthetic sample: masked input frames, the input clip's flow
    (hole-zeroed inside the sampler) and the clean first frame as anchor."""
    if config.use_flow and s.clip.frames.shape[0] < 2:
        raise ValueError("flow-enabled variants need clips of at least 2 frames")
    return Sampler(model, schedule, config).sample(
        s.masked, s.mask, s.clip.class_id, s.clip.flow,
        anchor=s.clean.frames[0] if anchor else None)


def quality(result: SampleResult, s: Sample) -> dict:
    gt = s.clean.frames
    return {"psnr": metrics.psnr(result.frames, gt), "ssim": metrics.ssim(result.frames, gt),
            "e_warp": metrics.warp_error(result.frames, s.clean.flow)}


def timed(fn, repeats: int = 5, warmup: int = 1) -> tuple[float, float, object]:
    """(median ms, std ms, last result) of ``fn()`` over ``repeats`` runs after ``warmup``."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    out = None
    with threadpool_limits(1):
        for _ in range(warmup):
            out = fn()
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = fn()
            times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times)), float(np.std(times)), out


@dataclass
class BenchRow:
    variant: str
    wall_ms: float
    wall_std_ms: float
    denoiser_calls: int
    cfg_factor: int
    flow_branch_calls: int
    kv_projection_calls: int
    psnr: float
    ssim: float
    speedup: float = 0.0


def run_bench(model, schedule, clips: list[Sample], base: SamplerConfig | None = None,
              variants=VARIANTS, repeats: int = 5, warmup: int = 1) -> list[BenchRow]:
    """Quality is averaged over ``clips``; timing and counters come from the first clip."""
    base = base or SamplerConfig()
    if not clips:
        raise ValueError("bench needs at least one evaluation clip")
    rows = []
    for name in variants:
        cfg = variant_config(name, base)
        cfg.validate()
        wall, std, res = timed(lambda: run_sample(model, schedule, cfg, clips[0]), repeats, warmup)
        q = [quality(res, clips[0])] + [quality(run_sample(model, schedule, cfg, s), s) for s in clips[1:]]
        rows.append(BenchRow(name, wall, std, res.frame_forwards, 2 if cfg.cfg else 1, res.flow_branch_calls,
                             int(sum(res.kv_projection_calls)), float(np.mean([x["psnr"] for x in q])),
                             float(np.mean([x["ssim"] for x in q]))))
    ref = next((r for r in rows if r.variant == SPEEDUP_REFERENCE), None)
    for r in rows:
        r.speedup = (1.0 - r.wall_ms / ref.wall_ms) if ref else float("nan")
    return rows


@dataclass
class SweepRow:
    S: int
    psnr: float
    ssim: float
    e_warp: float
    wall_ms: float
    denoiser_calls: int


def sweep_S(model, schedule, clips: list[Sample], S_values, base: SamplerConfig | None = None,
            repeats: int = 5, warmup: int = 1) -> list[SweepRow]:
    """Quality and time of the full pipeline at each speed-up step S."""
    S_values = list(S_values)
    if S_values != sorted(S_values):
        raise ValueError(f"S values must be sorted ascending, got {S_values}")
    base = base or SamplerConfig()
    rows = []
    for S in S_values:
        cfg = dataclasses.replace(base, S=S, use_interpolation=S > 0, use_flow=True)
        cfg.validate()
        q = [quality(run_sample(model, schedule, cfg, s), s) for s in clips]
        wall, calls = float("nan"), 0
        if repeats:
            wall, _, res = timed(lambda: run_sample(model, schedule, cfg, clips[0]), repeats, warmup)
            calls = res.frame_forwards
        rows.append(SweepRow(S, *(float(np.mean([x[k] for x in q])) for k in ("psnr", "ssim", "e_warp")),
                             wall, calls))
    return rows


def write_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise ValueError("no rows to write")
    fields = [f.name for f in dataclasses.fields(rows[0])]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in dataclasses.astuple(r)])
    return path
