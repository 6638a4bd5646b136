"""Command line: ``flowinpaint {gen-data,train,infer,eval,bench}``.

Exit codes: 0 success, 1 usage error (bad flag, unknown config key), 2
runtime error (missing file, malformed data, diverged training).
Settings come from ``--config file`` then trailing ``key=value`` overrides;
every run writes ``resolved.cfg`` next to its outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, io, metrics, synth
from .config import ConfigError, RunConfig, help_text
from .flow import FlowPair
from .sampler import Sampler, SamplerConfig
from .schedule import NoiseSchedule

log = logging.getLogger("flowinpaint")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowinpaint", description="Flow-guided video inpainting at desk scale.",
                epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, desc):
        sp = sub.add_parser(name, help=desc, description=desc, epilog=help_text(),
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
        return sp

    g = add("gen-data", "generate synthetic clips with exact flow and masks")
    g.add_argument("--count", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--kind", choices=("br", "or", "mixed"))
    g.add_argument("--seed", type=int)

    t = add("train", "train one stage and write per-epoch checkpoints")
    t.add_argument("--stage", type=int)
    t.add_argument("--data", required=True, help="dataset directory from gen-data")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--init", help="checkpoint to start from")

    i = add("infer", "inpaint one clip")
    i.add_argument("--input", required=True, help="clip.ten (N×3×H×W)")
    i.add_argument("--mask", required=True, help="mask.ten (N×1×H×W, 1 = known)")
    i.add_argument("--flow", help="clip.flo2 reference flow (omit to run without flow)")
    i.add_argument("--anchor", help="inpainted first frame as binary PPM")
    i.add_argument("--checkpoint")
    i.add_argument("--out", required=True, help="output directory")

    e = add("eval", "score predictions against ground truth")
    e.add_argument("--pred", required=True, help="directory of <clip>/output.ten or <clip>.ten")
    e.add_argument("--gt", required=True, help="dataset directory from gen-data")
    e.add_argument("--out", required=True, help="report CSV")

    b = add("bench", "variant timing table and speed-up-step sweep")
    b.add_argument("--checkpoint")
    b.add_argument("--data", help="evaluation dataset (default: generated held-out clips)")
    b.add_argument("--variants", help="comma-separated variant names")
    b.add_argument("--sweep-s", dest="sweep_s", help="comma-separated S values")
    b.add_argument("--out", required=True, help="bench CSV (the sweep goes to <stem>_sweep.csv)")
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    for flag in ("count", "kind", "seed", "stage", "init", "checkpoint", "variants", "sweep_s"):
        val = getattr(args, flag, None)
        if val is not None:
            out[flag] = val
    return out


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def sampler_config(cfg: RunConfig) -> SamplerConfig:
    """Sampler settings from the run config; inconsistent values are usage errors."""
    sc = SamplerConfig(steps=cfg["infer_steps"], S=cfg["S"], guidance_scale=cfg["guidance_scale"],
                         use_anchor=cfg["use_anchor"], use_interpolation=cfg["use_interpolation"],
                         use_cache=cfg["use_cache"], use_flow=cfg["use_flow"], use_adapter=cfg["use_adapter"],
                         clip_denoised=cfg["clip_denoised"], renoise=cfg["renoise"], seed=cfg["seed"])
    try:
        sc.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return sc


def _load_model(cfg: RunConfig):
    from .trainer import load_model
    ckpt = cfg["checkpoint"]
    if not ckpt:
        raise ConfigError("a model checkpoint is required (--checkpoint or checkpoint=)")
    if not Path(ckpt).is_dir():
        raise FileNotFoundError(f"checkpoint directory not found: {ckpt}")
    return load_model(ckpt, seed=cfg["seed"])


# -- subcommands ------------------------------------------------------------------
def cmd_gen_data(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    n, size = cfg["frames"], cfg["resolution"]
    samples = synth.make_dataset(cfg["count"], seed=cfg["seed"], kind=cfg["kind"], N=n, H=size, W=size)
    synth.save_dataset(out, samples, ppm=cfg["ppm"])
    cfg.write(out / "resolved.cfg")
    log.info("wrote %d samples to %s", len(samples), out)


def cmd_train(args, cfg: RunConfig) -> None:
    from .denoiser import VideoDenoiser
    from .trainer import TrainConfig, Trainer, load_model
    data = synth.load_dataset(args.data)
    tc = TrainConfig(stage=cfg["stage"], epochs=cfg["epochs"], lr=cfg["lr"], lam=cfg["lambda"],
                     batch_accum=cfg["batch_accum"], micro_batch=cfg["micro_batch"],
                     frames_per_clip=cfg["frames_per_clip"], max_steps=cfg["max_steps"],
                     p_uncond=cfg["p_uncond"], anchor_prob=cfg["anchor_prob"], grad_clip=cfg["grad_clip"],
                     seed=cfg["seed"], use_adapter=cfg["use_adapter"], keep_last=cfg["keep_last"])
    init = cfg["init"]
    if init and not Path(init).is_dir():
        raise FileNotFoundError(f"init checkpoint not found: {init}")
    model = load_model(init, seed=cfg["seed"]) if init else VideoDenoiser(cfg["seed"])
    out = Path(args.out)
    cfg.write(out / "resolved.cfg")
    tr = Trainer(model, NoiseSchedule.linear(), tc, out_dir=out)
    final = tr.run(data, callback=lambda r: log.debug("step %d %s", r.step, r.as_dict()))
    log.info("stage %d done after %d steps; checkpoint %s", tc.stage, tr.state.step, final)


def cmd_infer(args, cfg: RunConfig) -> None:
    frames = io.read_ten(args.input)
    mask = io.read_ten(args.mask)
    if frames.ndim != 4 or mask.shape != (frames.shape[0], 1) + frames.shape[2:]:
        raise ValueError(f"mask {mask.shape} does not match clip {frames.shape}")
    sc = sampler_config(cfg)
    flow = None
    if args.flow:
        flow = FlowPair(*io.read_flo2(args.flow))
    elif sc.use_flow:
        log.warning("no --flow given: running without flow completion, adapter or interpolation")
        sc.use_flow = sc.use_interpolation = False
        sc.use_cache = False
    anchor = io.read_ppm(args.anchor) if args.anchor else None
    model = _load_model(cfg)
    class_id = cfg["class_id"]
    cls = model.null_class if class_id < 0 else class_id
    res = Sampler(model, NoiseSchedule.linear(), sc).sample(frames * mask, mask, cls, flow, anchor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_ten(out / "output.ten", res.frames)
    for k, f in enumerate(res.frames):
        io.write_ppm(out / f"frame_{k:03d}.ppm", f)
    cfg.write(out / "resolved.cfg")
    (out / "counters.txt").write_text(
        f"frame_forwards={res.frame_forwards}\nflow_branch_calls={res.flow_branch_calls}\n"
        f"kv_projection_calls={','.join(map(str, res.kv_projection_calls))}\nwall_ms={res.wall_ms:.1f}\n")
    log.info("inpainted %d frames in %.0f ms -> %s", len(res.frames), res.wall_ms, out)


def _pred_for(pred_dir: Path, name: str) -> np.ndarray:
    for cand in (pred_dir / name / "output.ten", pred_dir / f"{name}.ten"):
        if cand.exists():
            return io.read_ten(cand)
    raise FileNotFoundError(f"no prediction for {name} under {pred_dir}")


def cmd_eval(args, cfg: RunConfig) -> None:
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_dir}")
    dirs = sorted(p for p in gt_dir.glob("sample_*") if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no sample_* directories under {gt_dir}")
    rep = metrics.EvalReport(config=cfg.as_dict())
    for d in dirs:
        s = synth.load_sample(d)
        rep.clips.append(metrics.score_clip(d.name, _pred_for(pred_dir, d.name), s.clean.frames,
                                            s.clean.flow, cfg["peak"]))
    out = rep.write_csv(args.out)
    cfg.write(out.parent / "resolved.cfg")
    log.info("evaluated %d clips: %s", rep.count, rep.aggregate())


def cmd_bench(args, cfg: RunConfig) -> None:
    model = _load_model(cfg)
    size = cfg["resolution"]
    if args.data:
        clips = synth.load_dataset(args.data)
    else:
        clips = [synth.make_sample(cfg["seed"] + 7919 * k + 1, "br", cfg["frames"], size, size)
                 for k in range(cfg["eval_clips"])]
    base = sampler_config(cfg)
    variants = [v.strip() for v in cfg["variants"].split(",") if v.strip()]
    for v in variants:
        if v not in bench.VARIANTS:      # reject before any work
            raise ConfigError(f"unknown bench variant {v!r}; expected one of {', '.join(bench.VARIANTS)}")
    sched = NoiseSchedule.linear()
    out = Path(args.out)
    rows = bench.run_bench(model, sched, clips, base, variants, cfg["repeats"], cfg["warmup"])
    bench.write_csv(rows, out)
    sweep = _int_list(cfg["sweep_s"])
    if sweep:
        srows = bench.sweep_S(model, sched, clips, sweep, base, cfg["repeats"], cfg["warmup"])
        bench.write_csv(srows, out.with_name(out.stem + "_sweep.csv"))
    cfg.write(out.parent / "resolved.cfg")
    log.info("bench rows written to %s", out)


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        cfg = RunConfig.load(args.config, _overrides(args))
    except SystemExit as e:        # --help
        return int(e.code or 0)
    except (UsageError, ConfigError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, str(cfg["log_level"]).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:       # runtime failures surface as exit 2 with the message
        print(f"error: {e}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
