"""Inpainting sampler: anchor frame, per-step copy-paste, flow-warped latent
interpolation over the early steps, and cached flow attention for the rest.

Step 1 denoises every frame, completes the flow once and (with caching)
fills the memory bank. Steps 2..S+1 alternate parity: one half of the
frames is denoised, the other half gets its clean-latent estimate by
warping the freshly denoised neighbours along the completed flow. The
remaining steps denoise every frame reading flow keys/values from the bank.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import schedule as sch
from . import tensor as T
from .denoiser import DenoiserInput, VideoDenoiser
from .flow import CompletedFlow, FlowPair, backward_warp, complete_flow, estimate_corrupted_flow

RENOISE_RULES = ("invert", "fresh", "transplant")


@dataclass
class SamplerConfig:
    steps: int = 25
    S: int = 5
    guidance_scale: float = 15.0
    use_anchor: bool = True
    use_interpolation: bool = True
    use_cache: bool = True
    use_flow: bool = True
    use_adapter: bool = True        # False: flow completion and interpolation only (ablation models)
    flow_every_step: bool = False
    clip_denoised: bool = True
    renoise: str = "invert"
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= self.S <= self.steps - 1:
            raise ValueError(f"speed-up steps S={self.S} must lie in [0, steps-1={self.steps - 1}]")
        if self.renoise not in RENOISE_RULES:
            raise ValueError(f"renoise must be one of {RENOISE_RULES}, got {self.renoise!r}")
        if self.use_interpolation and self.S > 0 and not self.use_flow:
            raise ValueError("latent interpolation needs the flow branch (use_flow)")
        if self.use_cache and self.flow_every_step:
            raise ValueError("flow_every_step recomputes flow features, which contradicts use_cache")

    @property
    def effective_S(self) -> int:
        return self.S if self.use_interpolation else 0

    @property
    def cfg(self) -> bool:
        return self.guidance_scale != 1.0


@dataclass
class ParityPlan:
    """Frame split for interpolation steps. With an odd frame count, frame 0
    is pinned (never denoised during interpolation) so both halves have equal
    size; it is synthesized from frame 1 or kept from its last estimate."""
    even_indices: list
    odd_indices: list
    pinned: list = field(default_factory=list)

    @classmethod
    def for_frames(cls, n: int) -> "ParityPlan":
        return cls(list(range(0, n, 2)), list(range(1, n, 2)), [0] if n % 2 else [])

    def active(self, interp_step: int) -> list:
        """Frames denoised at the ``interp_step``-th interpolation step (0-based)."""
        if interp_step % 2 == 0:
            return [i for i in self.even_indices if i not in self.pinned]
        return list(self.odd_indices)

    def inactive(self, interp_step: int) -> list:
        act = set(self.active(interp_step))
        return [i for i in range(len(self.even_indices) + len(self.odd_indices)) if i not in act]


@dataclass
class SampleResult:
    frames: np.ndarray
    frame_forwards: int
    flow_branch_calls: int
    kv_projection_calls: list
    wall_ms: float
    completed: CompletedFlow | None = None


def expected_frame_forwards(n_frames: int, steps: int, S: int, cfg: bool) -> int:
    return (n_frames * steps - S * math.ceil(n_frames / 2)) * (2 if cfg else 1)


def prepend_anchor(v_m: np.ndarray, m: np.ndarray, anchor: np.ndarray | None):
    """Clip of N+1 frames with ``anchor`` at index 0 and an all-known mask there."""
    if anchor is None:
        return v_m, m
    anchor = np.asarray(anchor, dtype=np.float32)
    if anchor.shape != v_m.shape[1:]:
        raise ValueError(f"anchor shape {anchor.shape} does not match frame shape {v_m.shape[1:]}")
    return (np.concatenate([anchor[None], v_m], axis=0),
            np.concatenate([np.ones_like(m[:1]), m], axis=0))


def copy_paste(schedule, z_next, z0_known, m, t_prev: int, eps_fixed) -> np.ndarray:
    """Known region replaced by the ground truth noised to ``t_prev`` (-1 = clean)."""
    known = sch.noise_at(schedule, z0_known, eps_fixed, t_prev)
    return (m * known + (1.0 - m) * z_next).astype(np.float32)


def extend_flow(flow: FlowPair, anchor: bool):
    """Prepend a zero flow pair linking the anchor to real frame 0 (same content)."""
    fwd, bwd = flow.forward, flow.backward
    if anchor:
        z = np.zeros_like(fwd[:1])
        fwd = np.concatenate([z, fwd])
        bwd = np.concatenate([z, bwd])
    return fwd, bwd


def warp_from_neighbours(z0: np.ndarray, fwd: np.ndarray, bwd: np.ndarray, i: int,
                         sources: set, fallback: np.ndarray) -> np.ndarray:
    """Estimate clean latent of frame ``i`` from fresh estimates of its adjacent frames.

    ``fwd[i]`` maps frame i -> i+1, so sampling frame i+1 at p + fwd[i](p)
    reconstructs frame i; likewise ``bwd[i-1]`` with frame i-1. Where both
    samples land in-frame they are averaged; with neither, ``fallback`` is used.
    """
    acc = np.zeros_like(z0[i])
    wsum = np.zeros((1,) + z0.shape[2:], dtype=np.float32)
    if i + 1 in sources:
        w, v = backward_warp(z0[i + 1], fwd[i])
        acc += w * v
        wsum += v
    if i - 1 in sources:
        w, v = backward_warp(z0[i - 1], bwd[i - 1])
        acc += w * v
        wsum += v
    out = np.where(wsum > 0, acc / np.maximum(wsum, 1.0), fallback)
    return out.astype(np.float32)


class Sampler:
    def __init__(self, model: VideoDenoiser, schedule: sch.NoiseSchedule, config: SamplerConfig):
        config.validate()
        self.model = model
        self.schedule = schedule
        self.config = config

    def _eps(self, z, m, zk, t, cls, idx, anchor, feats, bank, pairs):
        cfg = self.config
        B = 2 if cfg.cfg else 1
        conds = [cls, self.model.null_class][:B]
        inp = DenoiserInput(np.stack([z] * B), np.stack([m] * B), np.stack([zk * m] * B), t,
                            conds, frame_idx=idx, anchor=anchor)
        with T.no_grad():
            out = self.model(inp, flow_feats=feats, bank=bank, pairs=pairs).data
        if cfg.cfg:
            return sch.cfg_epsilon(out[0], out[1], cfg.guidance_scale)
        return out[0]

    def sample(self, v_m: np.ndarray, m: np.ndarray, class_id: int, flow: FlowPair | None = None,
               anchor: np.ndarray | None = None) -> SampleResult:
        cfg, sc, model = self.config, self.schedule, self.model
        v_m = np.asarray(v_m, dtype=np.float32)
        m = np.asarray(m, dtype=np.float32)
        N = v_m.shape[0]
        S = cfg.effective_S
        if S > 0 and N < 2:
            raise ValueError("latent interpolation needs at least 2 frames")
        if cfg.use_flow and flow is None:
            raise ValueError("use_flow is set but no reference flow was given")
        use_anchor = cfg.use_anchor and anchor is not None
        z_known, m_all = prepend_anchor(v_m, m, anchor if use_anchor else None)
        n_all = z_known.shape[0]

        prev_adapter = model.use_adapter
        model.use_adapter = cfg.use_flow and cfg.use_adapter
        model.frame_forwards = 0
        model.flow_branch.calls = 0
        model.adapter.reset_counters()
        start = time.perf_counter()
        try:
            rng = np.random.default_rng(cfg.seed)
            eps_fixed = rng.standard_normal(z_known.shape).astype(np.float32)
            ts = sc.inference_timesteps(cfg.steps)
            z = copy_paste(sc, eps_fixed, z_known, m_all, ts[0], eps_fixed)
            z0_prev = np.zeros_like(z)
            plan = ParityPlan.for_frames(n_all)
            all_idx = np.arange(n_all)

            completed = feats = bank = None
            fwd = bwd = None
            pairs = N - 1
            for k, t in enumerate(ts):
                tp = ts[k + 1] if k + 1 < len(ts) else -1
                if cfg.use_flow and (k == 0 or cfg.flow_every_step):
                    corrupted, _ = estimate_corrupted_flow(v_m, m, flow)
                    completed, feats = complete_flow(model.flow_branch, corrupted, m)
                    if k == 0:
                        fwd, bwd = extend_flow(completed.flow, use_anchor)
                    if cfg.use_cache and k == 0 and model.use_adapter:
                        bank = model.adapter.fill_bank(feats)
                src_feats = None if bank is not None else feats

                interp = 1 <= k <= S
                active = np.asarray(plan.active(k - 1)) if interp else all_idx
                eps = self._eps(z[active], m_all[active], z_known[active], t, class_id, active,
                                use_anchor, src_feats, bank, pairs)
                z0 = sch.predict_z0(sc, z[active], eps, t)
                if cfg.clip_denoised:
                    z0 = np.clip(z0, -1.0, 1.0)
                    eps = sch.invert_to_eps(sc, z[active], z0, t)
                z_next = np.empty_like(z)
                z_next[active] = sch.ddim_step(sc, z[active], eps, t, tp)
                z0_now = z0_prev.copy()
                z0_now[active] = z0
                if interp:
                    fresh = set(int(i) for i in active)
                    eps_now = np.zeros_like(z)
                    eps_now[active] = eps
                    for i in plan.inactive(k - 1):
                        z0w = warp_from_neighbours(z0_now, fwd, bwd, i, fresh, z0_prev[i])
                        z_next[i] = self._renoise(z[i], z0w, t, tp, i, fwd, bwd, fresh, eps_now, rng)
                        z0_now[i] = z0w
                z = copy_paste(sc, z_next, z_known, m_all, tp, eps_fixed)
                z0_prev = z0_now
        finally:
            model.use_adapter = prev_adapter
        wall = (time.perf_counter() - start) * 1e3
        frames = z[1:] if use_anchor else z
        return SampleResult(frames, model.frame_forwards, model.flow_branch.calls,
                            model.adapter.projection_calls, wall, completed)

    def _renoise(self, z_t, z0w, t, tp, i, fwd, bwd, fresh, eps_now, rng):
        sc, rule = self.schedule, self.config.renoise
        if rule == "invert":
            eps = sch.invert_to_eps(sc, z_t, z0w, t)
            return sch.ddim_step(sc, z_t, eps, t, tp)
        if rule == "fresh":
            return sch.noise_at(sc, z0w, rng.standard_normal(z0w.shape).astype(np.float32), tp)
        eps = warp_from_neighbours(eps_now, fwd, bwd, i, fresh, sch.invert_to_eps(sc, z_t, z0w, t))
        ab = np.float32(sc.abar(tp))
        return (np.sqrt(ab) * z0w + np.sqrt(np.float32(1) - ab) * eps).astype(np.float32)


def sample(model, schedule, config: SamplerConfig, v_m, m, class_id, flow=None, anchor=None) -> SampleResult:
    return Sampler(model, schedule, config).sample(v_m, m, class_id, flow, anchor)
