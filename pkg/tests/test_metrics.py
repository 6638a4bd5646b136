import logging
import math

import numpy as np
import pytest

from flowinpaint import metrics as M
from flowinpaint import synth
from flowinpaint.flow import FlowPair, backward_warp

from conftest import rigid_translation_clip


def test_psnr_cap_and_closed_form(rng):
    a = rng.uniform(-1, 1, (4, 3, 8, 8))
    assert M.psnr(a, a) == M.PSNR_CAP
    assert M.psnr(a, a + 0.1, peak=1.0) == pytest.approx(20.0, abs=1e-9)


def test_psnr_loop_oracle_and_symmetry(rng):
    a = rng.uniform(-1, 1, (3, 3, 6, 6))
    b = rng.uniform(-1, 1, (3, 3, 6, 6))
    vals = []
    for f in range(3):
        se = 0.0
        for idx in np.ndindex(a.shape[1:]):
            se += (a[f][idx] - b[f][idx]) ** 2
        vals.append(10 * math.log10(4.0 / (se / a[f].size)))
    assert M.psnr(a, b) == pytest.approx(sum(vals) / 3, abs=1e-4)
    assert M.psnr(a, b) == M.psnr(b, a)


def _ssim_oracle(a, b, peak=2.0, win=8, stride=4):
    ya = np.tensordot([0.299, 0.587, 0.114], a, axes=([0], [1]))
    yb = np.tensordot([0.299, 0.587, 0.114], b, axes=([0], [1]))
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for f in range(ya.shape[0]):
        for y in range(0, ya.shape[1] - win + 1, stride):
            for x in range(0, ya.shape[2] - win + 1, stride):
                p = ya[f, y:y + win, x:x + win].ravel()
                q = yb[f, y:y + win, x:x + win].ravel()
                mp, mq = p.mean(), q.mean()
                vp, vq = ((p - mp) ** 2).mean(), ((q - mq) ** 2).mean()
                cov = ((p - mp) * (q - mq)).mean()
                vals.append((2 * mp * mq + c1) * (2 * cov + c2) / ((mp ** 2 + mq ** 2 + c1) * (vp + vq + c2)))
    return float(np.mean(vals))


def test_ssim_matches_window_loop(rng):
    a = rng.uniform(-1, 1, (2, 3, 16, 20))
    b = np.clip(a + rng.normal(0, 0.3, a.shape), -1, 1)
    assert M.ssim(a, b) == pytest.approx(_ssim_oracle(a, b), abs=1e-5)


def test_ssim_identity_and_sign(rng):
    a = rng.uniform(-1, 1, (2, 3, 16, 16))
    assert M.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    binary = (rng.random((1, 1, 16, 16)) > 0.5).astype(float)
    s = M.ssim(binary, 1 - binary, peak=1.0)
    assert s < 0 and s == pytest.approx(_ssim_oracle(np.repeat(binary, 3, 1), np.repeat(1 - binary, 3, 1), 1.0),
                                        abs=1e-5)
    assert -1 <= M.ssim(a, -a) <= 1


def test_ssim_small_frame_error():
    with pytest.raises(ValueError, match="smaller"):
        M.ssim(np.zeros((1, 3, 7, 16)), np.zeros((1, 3, 7, 16)))


def test_warp_error_zero_on_gt_and_static():
    frames, flow = rigid_translation_clip()
    assert M.warp_error(frames, flow) == 0.0
    frames, flow = rigid_translation_clip((-1, 0))
    assert M.warp_error(frames, flow) == 0.0
    static = np.repeat(frames[:1], 5, axis=0)
    z = np.zeros((4, 2) + frames.shape[2:], np.float32)
    assert M.warp_error(static, FlowPair(z, z)) == 0.0


def test_warp_error_oracle_and_monotone(rng):
    s = synth.make_sample(8)
    f = s.clip.frames
    warped, valid = backward_warp(f[1:], s.clip.flow.forward)
    oracle = (((f[:-1] - warped) ** 2).mean(axis=1, keepdims=True) * valid).sum() / valid.sum()
    assert M.warp_error(f, s.clip.flow) == pytest.approx(float(oracle), rel=1e-6)
    delta = rng.standard_normal(f.shape).astype(np.float32)
    errs = [M.warp_error(f + a * delta, s.clip.flow) for a in (0.01, 0.05, 0.2)]
    assert errs[0] < errs[1] < errs[2]


def test_temporal_consistency(rng, caplog):
    a = rng.standard_normal((1, 3, 4, 4))
    assert M.temporal_consistency(np.repeat(a, 3, 0)) == pytest.approx(1.0)
    assert M.temporal_consistency(np.concatenate([a, -a])) == pytest.approx(-1.0)
    v = rng.standard_normal((4, 3, 4, 4))
    flat = v.reshape(4, -1)
    oracle = np.mean([sum(flat[i] * flat[i + 1]) / math.sqrt(sum(flat[i] ** 2) * sum(flat[i + 1] ** 2))
                      for i in range(3)])
    assert M.temporal_consistency(v) == pytest.approx(oracle, abs=1e-6)
    with caplog.at_level(logging.WARNING):
        z = np.concatenate([a, np.zeros_like(a), a])
        with pytest.raises(ValueError):
            M.temporal_consistency(z)
        assert M.temporal_consistency(np.concatenate([a, a, np.zeros_like(a)])) == pytest.approx(1.0)
    assert "zero-norm" in caplog.text
    with pytest.raises(ValueError):
        M.temporal_consistency(a)


def test_report_csv(tmp_path):
    s = synth.make_sample(1)
    rep = M.evaluate({"a": s.clip.frames, "b": s.masked}, {"a": s.clip.frames, "b": s.clip.frames},
                     {"a": s.clip.flow, "b": s.clip.flow})
    agg = rep.aggregate()
    assert rep.count == 2 and agg["psnr"] == pytest.approx((99 + rep.clips[1].psnr) / 2)
    lines = rep.write_csv(tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "clip,psnr,ssim,e_warp,tc" and lines[-1].startswith("mean(2)") and len(lines) == 4
    with pytest.raises(ValueError, match="b"):
        M.evaluate({"a": s.clip.frames}, {"a": s.clip.frames, "b": s.clip.frames}, {})
