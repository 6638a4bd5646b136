"""The frozen reference run: data, staged training and the adapter ablation.

Everything the trend checks (training smoke, adapter ablation, speed-step
sweep) measure is produced here once and cached on disk. Stages chain
checkpoints: stage 0 (per-frame image model) -> stage 1 (motion layers) ->
stage 2 (motion + flow branch + adapter). The ablation continues stage 1 for
the same stage-2 budget with the adapter bypassed. On one CPU core the three
stages take about 90 minutes and the ablation another 35.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from . import synth
from .denoiser import VideoDenoiser
from .schedule import NoiseSchedule
from .trainer import TrainConfig, Trainer, load_model

log = logging.getLogger(__name__)

EVAL_SEED = 1_000_003


@dataclass
class ReferencePlan:
    train_clips: int = 256
    eval_clips: int = 8
    frames: int = 16
    size: int = 32
    seed: int = 0
    stage0_steps: int = 6000
    stage0_lr: float = 1e-3
    stage0_micro: int = 8
    stage0_frames: int = 4
    stage1_epochs: int = 5
    stage1_lr: float = 5e-4
    stage2_epochs: int = 30
    stage2_lr: float = 5e-4
    micro_batch: int = 2

    def stage_config(self, stage: int, **kw) -> TrainConfig:
        per_epoch0 = self.train_clips // self.stage0_micro
        if stage == 0:
            return TrainConfig(stage=0, epochs=-(-self.stage0_steps // per_epoch0), lr=self.stage0_lr,
                               micro_batch=self.stage0_micro, frames_per_clip=self.stage0_frames,
                               max_steps=self.stage0_steps, seed=self.seed, **kw)
        if stage == 1:
            return TrainConfig(stage=1, epochs=self.stage1_epochs, lr=self.stage1_lr,
                               micro_batch=self.micro_batch, seed=self.seed, **kw)
        return TrainConfig(stage=2, epochs=self.stage2_epochs, lr=self.stage2_lr,
                           micro_batch=self.micro_batch, seed=self.seed, **kw)


def train_set(plan: ReferencePlan) -> list:
    return synth.make_dataset(plan.train_clips, seed=plan.seed, N=plan.frames, H=plan.size, W=plan.size)


def eval_set(plan: ReferencePlan, kind: str = "br") -> list:
    """Held-out clips; seeds are disjoint from the training range."""
    return [synth.make_sample(EVAL_SEED + 7919 * i + (kind == "or"), kind, plan.frames, plan.size, plan.size)
            for i in range(plan.eval_clips)]


def _train(name: str, root: Path, init: Path | None, cfg: TrainConfig, data, plan) -> Path:
    out = root / name
    final = out / "final"
    if (final / "meta.txt").exists():
        return final
    model = load_model(init, seed=plan.seed) if init else VideoDenoiser(plan.seed)
    tr = Trainer(model, NoiseSchedule.linear(), cfg, out_dir=out)
    t0 = time.perf_counter()
    tr.run(data)
    log.info("%s: %d steps in %.0f s", name, tr.state.step, time.perf_counter() - t0)
    (out / "wall_seconds.txt").write_text(f"{time.perf_counter() - t0:.1f}\n")
    return final


def build(root, plan: ReferencePlan | None = None) -> dict[str, Path]:
    """Train (or reuse) every reference checkpoint under ``root``."""
    plan = plan or ReferencePlan()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stamp = root / "plan.json"
    if stamp.exists() and json.loads(stamp.read_text()) != asdict(plan):
        raise ValueError(f"{root} holds a reference run with a different plan; use another directory")
    stamp.write_text(json.dumps(asdict(plan), indent=1))
    data = train_set(plan)
    s0 = _train("stage0", root, None, plan.stage_config(0, log_every=100), data, plan)
    s1 = _train("stage1", root, s0, plan.stage_config(1, log_every=100), data, plan)
    s2 = _train("stage2", root, s1, plan.stage_config(2, log_every=100), data, plan)
    ab = _train("ablation", root, s1, plan.stage_config(2, log_every=100, use_adapter=False), data, plan)
    return {"stage0": s0, "stage1": s1, "stage2": s2, "ablation": ab}


def history(checkpoint) -> list[dict]:
    return json.loads((Path(checkpoint) / "history.json").read_text())
