"""Staged training loop with gradient accumulation and per-epoch checkpoints.

Stage 0 trains the spatial and condition layers as a per-frame image model
(temporal layers are exact identities at initialisation, so frames are
independent). Stage 1 trains the motion layers on clips under the noise
objective. Stage 2 adds the flow branch and flow adapter and optimises
``L_diff + lambda * L_flow``.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from . import schedule as sch
from . import tensor as T
from .denoiser import DenoiserInput, VideoDenoiser
from .flow import combined_loss, estimate_corrupted_flow, flow_loss
from .synth import Sample, remask

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int = 1
    lr: float = 5e-4
    lam: float = 0.1
    batch_accum: int = 1
    micro_batch: int = 2
    frames_per_clip: int = 0        # 0 = whole clip; stage 0 uses short random windows
    max_steps: int = 0              # 0 = run all epochs
    p_uncond: float = 0.1
    anchor_prob: float = 0.5
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 25
    use_adapter: bool = True        # False: stage-2 ablation, adapter bypassed (flow branch still trained)
    keep_last: int = 2              # per-epoch checkpoints kept on disk; 0 keeps all


@dataclass
class LossReport:
    step: int
    l_diff: float
    total: float
    l_flow: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class TrainState:
    stage: int
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)


def _batch_arrays(samples: list[Sample], masks: list[np.ndarray], frames: int, rng: np.random.Generator):
    z0s, ms, flows, cls = [], [], [], []
    for s, m in zip(samples, masks):
        z0 = s.clean.frames
        fl = s.clean.flow
        n = z0.shape[0]
        if frames and frames < n:
            start = int(rng.integers(0, n - frames + 1))
            sl = slice(start, start + frames)
            z0, m = z0[sl], m[sl]
            fl = type(fl)(fl.forward[start:start + frames - 1], fl.backward[start:start + frames - 1])
        z0s.append(z0)
        ms.append(m)
        flows.append(fl)
        cls.append(s.clip.class_id)
    return np.stack(z0s), np.stack(ms), flows, np.asarray(cls)


class Trainer:
    def __init__(self, model: VideoDenoiser, schedule: sch.NoiseSchedule, config: TrainConfig,
                 out_dir: str | Path | None = None):
        self.model = model
        self.schedule = schedule
        self.config = config
        self.out_dir = Path(out_dir) if out_dir else None
        model.set_stage(config.stage)
        model.use_adapter = config.stage == 2 and config.use_adapter
        self.opt = T.Adam([p for p in model.parameters() if p.requires_grad], lr=config.lr,
                          grad_clip=config.grad_clip)
        self.state = TrainState(stage=config.stage)

    # -- one micro-batch ------------------------------------------------------
    def _micro_loss(self, samples: list[Sample], masks: list[np.ndarray], rng: np.random.Generator):
        cfg, sc, model = self.config, self.schedule, self.model
        frames = cfg.frames_per_clip if cfg.stage == 0 else 0
        z0, m, flows, cls = _batch_arrays(samples, masks, frames, rng)
        B = z0.shape[0]
        anchor = cfg.stage > 0 and rng.random() < cfg.anchor_prob
        t = rng.integers(0, sc.T, size=B)
        drop = rng.random(B) < cfg.p_uncond
        cls = np.where(drop, model.null_class, cls)

        zk = z0
        mk = m
        if anchor:
            zk = np.concatenate([z0[:, :1], z0], axis=1)
            mk = np.concatenate([np.ones_like(m[:, :1]), m], axis=1)
        eps = rng.standard_normal(zk.shape).astype(np.float32)
        ab = sch.F32(1) * sc.alpha_bar[t][:, None, None, None, None]
        z_t = (np.sqrt(ab) * zk + np.sqrt(1 - ab) * eps).astype(np.float32)

        feats = None
        l_flow = None
        if cfg.stage == 2:
            outs, fts = [], []
            for b in range(B):
                corrupted, hole = estimate_corrupted_flow(z0[b] * m[b], m[b], flows[b])
                out, f = model.flow_branch(corrupted.stacked(), hole)
                outs.append(out)
                fts.append(f)
            gt = np.stack([fl.stacked() for fl in flows])
            pred = T.concat([o.reshape((1,) + o.shape) for o in outs], axis=0)
            l_flow = flow_loss(pred, gt)
            if not cfg.use_adapter:
                feats = None
            elif B == 1:
                feats = fts[0]
            else:
                feats = [T.concat(level, axis=0) for level in zip(*fts)]
        pairs = z0.shape[1] - 1
        inp = DenoiserInput(z_t, mk, zk * mk, t, cls, anchor=anchor)
        if feats is not None and B > 1:
            eps_hat = self._batched_adapter_forward(inp, feats, pairs, B)
        else:
            eps_hat = model(inp, flow_feats=feats, pairs=pairs if feats is not None else None)
        d = eps_hat - eps
        l_diff = T.mean(d * d)
        total = combined_loss(l_diff, l_flow, cfg.lam) if l_flow is not None else l_diff
        return total, l_diff, l_flow

    def _batched_adapter_forward(self, inp, feats, pairs, B):
        # each clip attends to its own flow pairs: run clips separately, concat outputs
        outs = []
        per = feats[0].shape[0] // B
        for b in range(B):
            sub = DenoiserInput(inp.z_t[b:b + 1], inp.m_lat[b:b + 1], inp.z_masked[b:b + 1],
                                np.asarray(inp.t)[b:b + 1], np.asarray(inp.cond)[b:b + 1], anchor=inp.anchor)
            f = [level[b * per:(b + 1) * per] for level in feats]
            outs.append(self.model(sub, flow_feats=f, pairs=pairs))
        return T.concat(outs, axis=0)

    def train_step(self, batches: list[tuple[list[Sample], list[np.ndarray]]]) -> LossReport:
        """One optimizer step over ``len(batches)`` accumulated micro-batches."""
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, cfg.stage, self.state.step])
        self.opt.zero_grad()
        tot = dif = flo = 0.0
        n = len(batches)
        for samples, masks in batches:
            try:
                total, l_diff, l_flow = self._micro_loss(samples, masks, rng)
            except T.NonFiniteError as e:
                self._dump_divergence(str(e))
            if not np.isfinite(total.data).all():
                self._dump_divergence(f"total={total.data}, l_diff={l_diff.data}, "
                                      f"l_flow={None if l_flow is None else l_flow.data}")
            try:
                (total * (1.0 / n)).backward()
            except T.NonFiniteError as e:
                self._dump_divergence(f"backward: {e}")
            tot += total.item() / n
            dif += l_diff.item() / n
            if l_flow is not None:
                flo += l_flow.item() / n
        self.opt.step()
        self.state.step += 1
        rep = LossReport(self.state.step, dif, tot, flo if cfg.stage == 2 else None)
        self.state.history.append(rep.as_dict())
        return rep

    def _dump_divergence(self, detail: str):
        msg = f"non-finite values at stage {self.config.stage} step {self.state.step}: {detail}"
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "diverged.txt").write_text(msg + "\n")
        raise TrainingDiverged(msg)

    # -- epochs -----------------------------------------------------------------
    def epoch_batches(self, dataset: list[Sample], epoch: int):
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, cfg.stage, 10_000 + epoch])
        order = rng.permutation(len(dataset))
        mask_seeds = rng.integers(0, 2 ** 31, size=len(dataset))
        per_step = cfg.micro_batch * cfg.batch_accum
        for s in range(len(order) // per_step):
            idx = order[s * per_step:(s + 1) * per_step]
            micro = []
            for j in range(cfg.batch_accum):
                chunk = idx[j * cfg.micro_batch:(j + 1) * cfg.micro_batch]
                micro.append(([dataset[i] for i in chunk], [remask(dataset[i], int(mask_seeds[i])) for i in chunk]))
            yield micro

    def run(self, dataset: list[Sample], callback=None) -> Path | None:
        cfg = self.config
        if not dataset:
            raise ValueError("training dataset is empty")
        if len(dataset) < cfg.micro_batch * cfg.batch_accum:
            raise ValueError(f"dataset of {len(dataset)} clips is smaller than one optimizer step "
                             f"({cfg.micro_batch} x {cfg.batch_accum})")
        last = None
        while self.state.epoch < cfg.epochs:
            for micro in self.epoch_batches(dataset, self.state.epoch):
                rep = self.train_step(micro)
                if callback:
                    callback(rep)
                if cfg.log_every and rep.step % cfg.log_every == 0:
                    log.info("stage %d step %d %s", cfg.stage, rep.step, rep.as_dict())
                if cfg.max_steps and self.state.step >= cfg.max_steps:
                    break
            self.state.epoch += 1
            if self.out_dir:
                last = self.save(self.out_dir / f"epoch_{self.state.epoch:03d}")
                self._prune()
            if cfg.max_steps and self.state.step >= cfg.max_steps:
                break
        if self.out_dir:
            last = self.save(self.out_dir / "final")
        return last

    def _prune(self) -> None:
        if not self.config.keep_last:
            return
        for old in sorted(self.out_dir.glob("epoch_*"))[:-self.config.keep_last]:
            shutil.rmtree(old)

    # -- checkpoints --------------------------------------------------------------
    def save(self, directory) -> Path:
        meta = {"stage": self.config.stage, "epoch": self.state.epoch, "step": self.state.step,
                "adam_t": self.opt.t}
        d = io.save_checkpoint(directory, self.model, self.opt.state_arrays(), meta)
        (Path(d) / "history.json").write_text(json.dumps(self.state.history))
        (Path(d) / "train_config.json").write_text(json.dumps(asdict(self.config)))
        return Path(d)

    def resume(self, directory) -> None:
        meta = io.load_checkpoint(directory, self.model)
        if int(meta.get("stage", self.config.stage)) == self.config.stage:
            arrays = io.load_state_arrays(directory)
            if arrays:
                self.opt.load_state_arrays(arrays, int(meta["adam_t"]))
            self.state.epoch = int(meta["epoch"])
            self.state.step = int(meta["step"])
            hist = Path(directory) / "history.json"
            if hist.exists():
                self.state.history = json.loads(hist.read_text())


def load_model(directory, seed: int = 0) -> VideoDenoiser:
    model = VideoDenoiser(seed)
    io.load_checkpoint(directory, model)
    return model


def moving_average(values, window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()])
    return np.convolve(v, np.ones(window) / window, mode="valid")
