"""Flat ``key=value`` run configuration.

One entry per line, ``#`` starts a comment. Values are typed by the key's
default. Unknown keys are rejected with the nearest valid key suggested.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Bad key or value; the command line reports it as a usage error."""


@dataclass(frozen=True)
class Key:
    default: object
    help: str


KEYS: dict[str, Key] = {
    # shared
    "seed": Key(0, "master seed for data, training and sampling"),
    "frames": Key(16, "frames per clip"),
    "resolution": Key(32, "frame height and width in pixels"),
    "log_level": Key("INFO", "stderr log level"),
    # gen-data
    "count": Key(64, "clips to generate"),
    "kind": Key("br", "mask family: br (background restoration), or (object removal), mixed"),
    "ppm": Key(False, "also dump frames as binary PPM"),
    # train
    "stage": Key(1, "training stage: 0 image pretraining, 1 motion layers, 2 flow branch + adapter"),
    "epochs": Key(5, "training epochs"),
    "lr": Key(5e-4, "Adam learning rate"),
    "lambda": Key(0.1, "flow-loss weight in stage 2"),
    "batch_accum": Key(1, "micro-batches accumulated per optimizer step"),
    "micro_batch": Key(2, "clips per micro-batch"),
    "max_steps": Key(0, "stop after this many optimizer steps (0 = all epochs)"),
    "frames_per_clip": Key(0, "random frame window per clip (0 = whole clip)"),
    "p_uncond": Key(0.1, "probability of dropping the class condition"),
    "anchor_prob": Key(0.5, "probability of training with a prepended anchor frame"),
    "grad_clip": Key(1.0, "global gradient-norm clip (0 = off)"),
    "use_adapter": Key(True, "false trains (stage 2) or runs the adapter-free ablation"),
    "keep_last": Key(2, "per-epoch checkpoints kept (0 = all)"),
    "init": Key("", "checkpoint to start training from"),
    # infer / bench
    "checkpoint": Key("", "model checkpoint directory"),
    "infer_steps": Key(25, "DDIM inference steps"),
    "S": Key(5, "speed-up steps with latent interpolation"),
    "guidance_scale": Key(15.0, "classifier-free guidance scale (1 = off)"),
    "class_id": Key(-1, "condition class for inference (-1 = unconditional)"),
    "use_anchor": Key(True, "prepend the anchor frame when one is given"),
    "use_interpolation": Key(True, "flow-warped latent interpolation over the first S steps"),
    "use_cache": Key(True, "reuse flow-attention keys/values from the first step"),
    "use_flow": Key(True, "flow completion and flow adapter at inference"),
    "clip_denoised": Key(True, "clamp the clean-latent estimate to [-1, 1]"),
    "renoise": Key("invert", "re-noising rule for warped latents: invert, fresh, transplant"),
    # eval / bench
    "peak": Key(2.0, "PSNR/SSIM dynamic range (pixels live in [-1, 1])"),
    "repeats": Key(5, "timed runs per bench variant"),
    "warmup": Key(1, "untimed warm-up runs per bench variant"),
    "eval_clips": Key(4, "held-out clips generated when bench has no --data"),
    "variants": Key("baseline-no-flow,flow-every-step,flow-first-step,+interpolation,+cache", "bench variants"),
    "sweep_s": Key("0,3,5,8,12", "speed-up steps for the sweep (empty = no sweep)"),
}

ALIASES = {"speed_up_steps": "S", "speedup_steps": "S", "steps": "infer_steps", "lam": "lambda"}


def nearest_key(name: str) -> str:
    pool = list(KEYS) + list(ALIASES)
    best = difflib.get_close_matches(name, pool, n=1, cutoff=0.0)
    return best[0] if best else ""


def _coerce(key: str, raw) -> object:
    default = KEYS[key].default
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


class RunConfig:
    """Defaults, then a config file, then command-line overrides."""

    def __init__(self, values: dict | None = None):
        self._values = {k: v.default for k, v in KEYS.items()}
        self.update(values or {})

    def update(self, values: dict, source: str = "") -> None:
        for raw_key, raw in values.items():
            key = ALIASES.get(raw_key, raw_key)
            if key not in KEYS:
                where = f" in {source}" if source else ""
                near = nearest_key(raw_key)
                hint = f" (alias of {ALIASES[near]!r})" if near in ALIASES else ""
                raise ConfigError(f"unknown config key {raw_key!r}{where}; did you mean {near!r}{hint}?")
            self._values[key] = _coerce(key, raw)

    def __getitem__(self, key: str):
        return self._values[ALIASES.get(key, key)]

    def as_dict(self) -> dict:
        return dict(self._values)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        cfg = cls()
        if path:
            cfg.update(parse_file(path), source=str(path))
        cfg.update(overrides or {})
        return cfg

    def dump(self) -> str:
        lines = [f"{k}={_fmt(v)}" for k, v in self._values.items()]
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dump())
        return path


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_text(path.read_text(), str(path))


def help_text() -> str:
    width = max(len(k) for k in KEYS)
    rows = [f"  {k:<{width}}  default={_fmt(v.default):<10}  {v.help}" for k, v in KEYS.items()]
    return "config keys (file lines or trailing key=value overrides):\n" + "\n".join(rows)
