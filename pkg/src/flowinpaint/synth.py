"""Synthetic moving-shape videos with exact optical flow, and inpainting masks.

Frames are static backgrounds (solid or linear gradient) with circles and
squares translating at integral velocities, rendered with hard edges at
integer pixel coordinates. Because every primitive moves by whole pixels,
the forward flow reproduces frame ``i`` from frame ``i+1`` exactly wherever
the same primitive (or the background) owns both ends of the displacement.

Pixel values live in [-1, 1]; the latent codec is the identity on these.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io
from .flow import FlowPair

MOTIONS = {0: (1, 0), 1: (-1, 0), 2: (0, 1), 3: (1, 1)}
SHAPES = ("circle", "square")
NUM_CLASSES = len(SHAPES) * len(MOTIONS)


@dataclass
class Primitive:
    shape: str
    color: tuple
    size: int
    velocity: tuple
    start: tuple

    def center(self, i: int) -> tuple:
        return (self.start[0] + self.velocity[0] * i, self.start[1] + self.velocity[1] * i)


@dataclass
class SceneSpec:
    class_id: int
    primitives: list
    background: dict
    N: int = 16
    H: int = 32
    W: int = 32


@dataclass
class MaskSpec:
    kind: str = "br"            # "br" (background restoration) or "or" (object removal)
    strokes: tuple = (1, 3)
    size_range: tuple = (5, 12)
    target: int = -1            # primitive index for OR; -1 = class-defining primitive
    margin: int = 2


@dataclass
class Clip:
    frames: np.ndarray      # (N, 3, H, W)
    flow: FlowPair
    class_id: int
    owners: np.ndarray = field(repr=False)  # (N, H, W) int, -1 = background
    spec: SceneSpec = field(repr=False, default=None)


def _support(p: Primitive, i: int, H: int, W: int) -> np.ndarray:
    cx, cy = p.center(i)
    ys, xs = np.mgrid[0:H, 0:W]
    if p.shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= p.size ** 2
    return (np.abs(xs - cx) <= p.size) & (np.abs(ys - cy) <= p.size)


def _background(bg: dict, H: int, W: int) -> np.ndarray:
    c0 = np.asarray(bg["c0"], dtype=np.float32)[:, None, None]
    if bg.get("kind", "solid") == "solid":
        return np.broadcast_to(c0, (3, H, W)).astype(np.float32)
    c1 = np.asarray(bg["c1"], dtype=np.float32)[:, None, None]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float32)
    dx, dy = bg.get("dir", (1.0, 0.0))
    ramp = (xs * dx / max(W - 1, 1) + ys * dy / max(H - 1, 1)) / max(abs(dx) + abs(dy), 1e-6)
    return (c0 + (c1 - c0) * ramp[None]).astype(np.float32)


def generate_clip(spec: SceneSpec, seed: int | None = None) -> Clip:
    """Render a clip and its ground-truth flow. The scene fully determines the
    result; ``seed`` is accepted for interface symmetry with ``generate_mask``."""
    N, H, W = spec.N, spec.H, spec.W
    for k, p in enumerate(spec.primitives):
        if any(float(v) * 2 != int(float(v) * 2) for v in p.velocity):
            raise ValueError(f"primitive {k}: velocity {p.velocity} must be integral or half-integral")
        for i in (0, N - 1):
            cx, cy = p.center(i)
            if cx - p.size < 0 or cy - p.size < 0 or cx + p.size > W - 1 or cy + p.size > H - 1:
                raise ValueError(f"primitive {k} leaves the {H}x{W} frame at frame {i} (center {cx}, {cy})")
    bg = _background(spec.background, H, W)
    frames = np.empty((N, 3, H, W), dtype=np.float32)
    owners = np.full((N, H, W), -1, dtype=np.int64)
    for i in range(N):
        f = bg.copy()
        for k, p in enumerate(spec.primitives):
            sup = _support(p, i, H, W)
            f[:, sup] = np.asarray(p.color, dtype=np.float32)[:, None]
            owners[i][sup] = k
        frames[i] = f
    vel = np.zeros((len(spec.primitives) + 1, 2), dtype=np.float32)
    for k, p in enumerate(spec.primitives):
        vel[k] = p.velocity
    # owner -1 indexes the trailing zero row (static background)
    fwd = vel[owners[:-1]].transpose(0, 3, 1, 2)
    bwd = -vel[owners[1:]].transpose(0, 3, 1, 2)
    return Clip(frames, FlowPair(np.ascontiguousarray(fwd), np.ascontiguousarray(bwd)),
                spec.class_id, owners, spec)


def consistency_mask(clip: Clip) -> np.ndarray:
    """(N-1, H, W) bool: pixel p of frame i maps by forward flow onto frame i+1
    inside the frame and onto the same owner (non-disoccluded)."""
    N, H, W = clip.owners.shape
    out = np.zeros((N - 1, H, W), dtype=bool)
    ys, xs = np.mgrid[0:H, 0:W]
    for i in range(N - 1):
        tx = xs + clip.flow.forward[i, 0]
        ty = ys + clip.flow.forward[i, 1]
        ok = (tx >= 0) & (tx <= W - 1) & (ty >= 0) & (ty <= H - 1) & (tx == np.round(tx)) & (ty == np.round(ty))
        txi = np.clip(tx, 0, W - 1).astype(int)
        tyi = np.clip(ty, 0, H - 1).astype(int)
        out[i] = ok & (clip.owners[i + 1][tyi, txi] == clip.owners[i])
    return out


def random_scene(rng: np.random.Generator, N: int = 16, H: int = 32, W: int = 32,
                 class_id: int | None = None, distractor_prob: float = 0.5) -> SceneSpec:
    if class_id is None:
        class_id = int(rng.integers(NUM_CLASSES))
    shape = SHAPES[class_id // len(MOTIONS)]
    vx, vy = MOTIONS[class_id % len(MOTIONS)]

    def place(size, v):
        lo_x, hi_x = size - min(0, v[0]) * (N - 1), W - 1 - size - max(0, v[0]) * (N - 1)
        lo_y, hi_y = size - min(0, v[1]) * (N - 1), H - 1 - size - max(0, v[1]) * (N - 1)
        if hi_x < lo_x or hi_y < lo_y:
            return None
        return (int(rng.integers(lo_x, hi_x + 1)), int(rng.integers(lo_y, hi_y + 1)))

    bg_kind = "gradient" if rng.random() < 0.7 else "solid"
    c0 = rng.uniform(-0.8, 0.8, 3)
    c1 = np.clip(c0 + rng.uniform(-0.6, 0.6, 3), -1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    background = {"kind": bg_kind, "c0": tuple(float(c) for c in c0), "c1": tuple(float(c) for c in c1),
                  "dir": (float(np.cos(angle)), float(np.sin(angle)))}

    def colour():
        while True:
            c = rng.uniform(-1, 1, 3)
            if np.abs(c - c0).max() > 0.5:
                return tuple(float(x) for x in c)

    prims = []
    size = int(rng.integers(3, 6))
    speed = 1 if N > 8 else int(rng.integers(1, 3))
    vel = (vx * speed, vy * speed)
    start = place(size, vel)
    while start is None:
        size -= 1
        start = place(size, vel)
    prims.append(Primitive(shape, colour(), size, vel, start))
    if rng.random() < distractor_prob:
        dshape = SHAPES[int(rng.integers(2))]
        dsize = int(rng.integers(2, 4))
        dvel = (0, 0) if rng.random() < 0.5 else tuple(int(v) for v in rng.integers(-1, 2, 2))
        dstart = place(dsize, dvel)
        if dstart is not None:
            # drawn first so the class-defining primitive stays on top
            prims.insert(0, Primitive(dshape, colour(), dsize, dvel, dstart))
    return SceneSpec(class_id, prims, background, N, H, W)


def target_index(spec: SceneSpec) -> int:
    """Index of the class-defining primitive (drawn last, on top)."""
    return len(spec.primitives) - 1


def generate_mask(spec: MaskSpec, clip: Clip, seed: int | None = None) -> np.ndarray:
    """(N, 1, H, W) float32 known-region mask: 1 known, 0 hole."""
    rng = np.random.default_rng(seed)
    N, _, H, W = clip.frames.shape
    if spec.kind == "or":
        target = spec.target if spec.target >= 0 else int(clip.owners.max())
        hole = clip.owners == target
        if spec.margin:
            st = np.ones((1, 3, 3), dtype=bool)
            hole = ndimage.binary_dilation(hole, structure=st, iterations=spec.margin)
    elif spec.kind == "br":
        base = np.zeros((H, W), dtype=bool)
        ys, xs = np.mgrid[0:H, 0:W]
        for _ in range(int(rng.integers(spec.strokes[0], spec.strokes[1] + 1))):
            hi = min(spec.size_range[1], H, W)      # small frames clamp the stroke size
            lo = min(spec.size_range[0], hi)
            w, h = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
            x0, y0 = int(rng.integers(0, W - w + 1)), int(rng.integers(0, H - h + 1))
            if rng.random() < 0.5:
                base[y0:y0 + h, x0:x0 + w] = True
            else:
                cx, cy = x0 + (w - 1) / 2, y0 + (h - 1) / 2
                base |= ((xs - cx) / (w / 2)) ** 2 + ((ys - cy) / (h / 2)) ** 2 <= 1.0
        fg = clip.owners >= 0
        fg = ndimage.binary_dilation(fg, structure=np.ones((1, 3, 3), dtype=bool))
        hole = base[None] & ~fg
    else:
        raise ValueError(f"unknown mask kind {spec.kind!r}; expected 'br' or 'or'")
    return (~hole).astype(np.float32)[:, None]


@dataclass
class Sample:
    """A clip, its known-region mask, and the clean target video.

    For background restoration the target is the clip itself. For object
    removal it is the same scene re-rendered without the masked primitive,
    so the hole has a well-defined ground truth.
    """
    clip: Clip
    mask: np.ndarray
    kind: str
    clean: Clip = None

    def __post_init__(self):
        if self.clean is None:
            self.clean = self.clip

    @property
    def masked(self) -> np.ndarray:
        return self.clip.frames * self.mask


def without_primitive(spec: SceneSpec, index: int) -> SceneSpec:
    prims = [p for k, p in enumerate(spec.primitives) if k != index]
    return SceneSpec(spec.class_id, prims, spec.background, spec.N, spec.H, spec.W)


def make_sample(seed: int, kind: str = "br", N: int = 16, H: int = 32, W: int = 32,
                class_id: int | None = None) -> Sample:
    rng = np.random.default_rng(seed)
    spec = random_scene(rng, N, H, W, class_id)
    clip = generate_clip(spec)
    mask = generate_mask(MaskSpec(kind=kind), clip, seed=int(rng.integers(2 ** 31)))
    clean = None
    if kind == "or":
        clean = generate_clip(without_primitive(spec, target_index(spec)))
    return Sample(clip, mask, kind, clean)


def make_dataset(count: int, seed: int = 0, kind: str = "mixed", N: int = 16, H: int = 32,
                 W: int = 32) -> list[Sample]:
    """``kind`` is "br", "or" or "mixed" (alternating)."""
    seeds = np.random.default_rng(seed).integers(0, 2 ** 31, size=count)
    out = []
    for i, s in enumerate(seeds):
        k = kind if kind != "mixed" else ("br", "or")[i % 2]
        out.append(make_sample(int(s), k, N, H, W))
    return out


def remask(sample: Sample, seed: int) -> np.ndarray:
    """Fresh mask of the sample's kind; OR masks are deterministic given the clip."""
    return generate_mask(MaskSpec(kind=sample.kind), sample.clip, seed=seed)


# -- serialization ------------------------------------------------------------
def save_sample(directory, sample: Sample, ppm: bool = False) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    c = sample.clip
    io.write_ten(d / "clip.ten", c.frames)
    io.write_ten(d / "mask.ten", sample.mask)
    io.write_ten(d / "owners.ten", c.owners.astype(np.float32))
    io.write_flo2(d / "clip.flo2", c.flow.forward, c.flow.backward)
    spec = c.spec
    lines = [f"class_id={c.class_id}", f"kind={sample.kind}"]
    if spec is not None:
        lines.append(f"N={spec.N}")
        lines.append(f"H={spec.H}")
        lines.append(f"W={spec.W}")
        lines.append(f"background={spec.background}")
        for k, p in enumerate(spec.primitives):
            lines.append(f"primitive{k}={p.shape} color={p.color} size={p.size} "
                         f"velocity={p.velocity} start={p.start}")
    (d / "meta.txt").write_text("\n".join(lines) + "\n")
    if sample.clean is not c:
        io.write_ten(d / "clean.ten", sample.clean.frames)
        io.write_ten(d / "clean_owners.ten", sample.clean.owners.astype(np.float32))
        io.write_flo2(d / "clean.flo2", sample.clean.flow.forward, sample.clean.flow.backward)
    if ppm:
        for i, f in enumerate(c.frames):
            io.write_ppm(d / f"frame_{i:03d}.ppm", f)
    return d


def load_sample(directory) -> Sample:
    d = Path(directory)
    for name in ("clip.ten", "mask.ten", "clip.flo2", "meta.txt"):
        if not (d / name).exists():
            raise FileNotFoundError(f"missing {d / name}")
    meta = dict(line.split("=", 1) for line in (d / "meta.txt").read_text().splitlines() if "=" in line)
    frames = io.read_ten(d / "clip.ten")
    fwd, bwd = io.read_flo2(d / "clip.flo2")
    owners = (io.read_ten(d / "owners.ten").astype(np.int64) if (d / "owners.ten").exists()
              else np.full(frames.shape[:1] + frames.shape[2:], -1, dtype=np.int64))
    clip = Clip(frames, FlowPair(fwd, bwd), int(meta["class_id"]), owners, None)
    clean = None
    if (d / "clean.ten").exists():
        cf, cb = io.read_flo2(d / "clean.flo2")
        clean = Clip(io.read_ten(d / "clean.ten"), FlowPair(cf, cb), clip.class_id,
                     io.read_ten(d / "clean_owners.ten").astype(np.int64), None)
    return Sample(clip, io.read_ten(d / "mask.ten"), meta.get("kind", "br").strip(), clean)


def save_dataset(directory, samples: list[Sample], ppm: bool = False) -> list[Path]:
    return [save_sample(Path(directory) / f"sample_{i:05d}", s, ppm) for i, s in enumerate(samples)]


def load_dataset(directory) -> list[Sample]:
    d = Path(directory)
    dirs = sorted(p for p in d.glob("sample_*") if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no sample_* directories under {d}")
    return [load_sample(p) for p in dirs]
