"""Binary file formats: ``.ten`` tensors, ``.flo2`` flow pairs, PPM frames, checkpoints."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

TEN_MAGIC = b"TEN1"
FLO_MAGIC = b"FLO2"


class FormatError(ValueError):
    pass


def write_ten(path, array) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = TEN_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_ten(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != TEN_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {TEN_MAGIC!r}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(raw) - offset != 4 * count:
        raise FormatError(f"{path}: payload has {len(raw) - offset} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(dims)


def write_flo2(path, forward, backward) -> None:
    fwd = np.asarray(forward, dtype="<f4")
    bwd = np.asarray(backward, dtype="<f4")
    if fwd.shape != bwd.shape or fwd.ndim != 4 or fwd.shape[1] != 2:
        raise FormatError(f"flow planes must both be (N-1, 2, H, W); got {fwd.shape} and {bwd.shape}")
    n1, _, h, w = fwd.shape
    header = FLO_MAGIC + struct.pack("<III", n1, h, w)
    Path(path).write_bytes(header + np.ascontiguousarray(fwd).tobytes() + np.ascontiguousarray(bwd).tobytes())


def read_flo2(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != FLO_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {FLO_MAGIC!r}")
    n1, h, w = struct.unpack_from("<III", raw, 4)
    count = n1 * 2 * h * w
    if len(raw) - 16 != 8 * count:
        raise FormatError(f"{path}: payload size does not match header ({n1}, {h}, {w})")
    data = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float32)
    return data[:count].reshape(n1, 2, h, w), data[count:].reshape(n1, 2, h, w)


def write_ppm(path, frame) -> None:
    """Write a ``3×H×W`` frame with values in [-1, 1] as binary P6."""
    f = np.asarray(frame, dtype=np.float32)
    if f.ndim != 3 or f.shape[0] != 3:
        raise FormatError(f"PPM frames must be 3×H×W, got {f.shape}")
    pix = np.clip(np.rint((f + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = f.shape[1:]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + pix.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: only binary P6 is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    pix = np.frombuffer(raw, dtype=np.uint8, offset=pos + 1, count=w * h * 3).reshape(h, w, 3)
    return (pix.transpose(2, 0, 1).astype(np.float32) / (maxval / 2.0)) - 1.0


def save_checkpoint(directory, module, extra: dict[str, np.ndarray] | None = None,
                    meta: dict[str, str] | None = None) -> Path:
    """Write every parameter as ``<name>.ten`` plus ``manifest.txt`` (name, file, group)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, p in module.named_parameters():
        fname = f"{name}.ten"
        write_ten(d / fname, p.data)
        lines.append(f"{name}\t{fname}\t{p.group}")
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    if extra:
        sd = d / "state"
        sd.mkdir(exist_ok=True)
        for key, arr in extra.items():
            write_ten(sd / f"{key}.ten", arr)
    if meta is not None:
        (d / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    return d


def load_checkpoint(directory, module, strict: bool = True) -> dict[str, str]:
    d = Path(directory)
    manifest = d / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest}")
    params = dict(module.named_parameters())
    seen = set()
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, fname, group = line.split("\t")
        if name not in params:
            if strict:
                raise KeyError(f"{manifest}: unknown parameter {name!r}")
            continue
        p = params[name]
        arr = read_ten(d / fname)
        if arr.shape != p.shape or group != p.group:
            raise FormatError(f"{d / fname}: {arr.shape}/{group} does not match {p.shape}/{p.group}")
        p.data[...] = arr
        seen.add(name)
    missing = set(params) - seen
    if strict and missing:
        raise KeyError(f"{manifest}: missing parameters {sorted(missing)[:5]}")
    meta = {}
    if (d / "meta.txt").exists():
        for line in (d / "meta.txt").read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k] = v
    return meta


def load_state_arrays(directory) -> dict[str, np.ndarray]:
    sd = Path(directory) / "state"
    if not sd.exists():
        return {}
    return {p.stem: read_ten(p) for p in sorted(sd.glob("*.ten"))}
