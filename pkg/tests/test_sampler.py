import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowinpaint import schedule as sch
from flowinpaint import synth
from flowinpaint.denoiser import DenoiserInput, VideoDenoiser
from flowinpaint.sampler import (ParityPlan, Sampler, SamplerConfig, copy_paste, expected_frame_forwards,
                                 prepend_anchor, warp_from_neighbours)

from conftest import rigid_translation_clip

SC = sch.NoiseSchedule.linear()


@pytest.fixture(scope="module")
def model():
    m = VideoDenoiser(seed=0, widths=(8, 16, 16), cond_dim=8, temb_dim=16)
    rng = np.random.default_rng(0)
    for p in m.parameters():          # untrained but non-degenerate: every path active
        if not p.data.any():
            p.data[...] = rng.standard_normal(p.shape) * 0.05
    return m


@pytest.fixture(scope="module")
def clip():
    return synth.make_sample(11, "br")


def run(model, s, anchor=False, **kw):
    cfg = SamplerConfig(**{"guidance_scale": 1.0, **kw})
    return Sampler(model, SC, cfg).sample(s.masked, s.mask, s.clip.class_id, s.clip.flow,
                                          anchor=s.clip.frames[0] if anchor else None)


def test_parity_plan():
    p = ParityPlan.for_frames(16)
    assert sorted(p.even_indices + p.odd_indices) == list(range(16))
    assert not set(p.even_indices) & set(p.odd_indices)
    assert len(p.active(0)) == len(p.active(1)) == 8 and p.active(0) != p.active(1)
    assert p.active(2) == p.active(0)
    q = ParityPlan.for_frames(17)
    assert len(q.active(0)) == len(q.active(1)) == 8 and 0 not in q.active(0) + q.active(1)


def test_frame_forward_counts_default_settings(model, clip):
    acc = run(model, clip, steps=25, S=5)
    base = run(model, clip, steps=25, S=0, use_interpolation=False)
    assert acc.frame_forwards == 16 * 25 - 5 * 8 == 360
    assert base.frame_forwards == 400
    assert acc.flow_branch_calls == base.flow_branch_calls == 1


def test_frame_forward_count_with_anchor_and_cfg(model, clip):
    res = run(model, clip, anchor=True, steps=6, S=3, guidance_scale=15.0)
    assert res.frame_forwards == expected_frame_forwards(17, 6, 3, True) == (17 * 6 - 3 * 9) * 2
    assert res.frames.shape == clip.clip.frames.shape


@settings(max_examples=6, deadline=None)
@given(st.integers(2, 7), st.integers(2, 6), st.data())
def test_frame_forward_identity_property(n, steps, data):
    S = data.draw(st.integers(0, steps - 1))
    m = VideoDenoiser(seed=0, widths=(8, 8, 8), cond_dim=8, temb_dim=16)
    s = synth.make_sample(3, "br", N=n, H=8, W=8)
    res = run(m, s, steps=steps, S=S)
    assert res.frame_forwards == n * steps - S * math.ceil(n / 2)


def test_cache_soundness_end_to_end(model, clip):
    cached = run(model, clip, S=0, use_interpolation=False, use_cache=True)
    fresh = run(model, clip, S=0, use_interpolation=False, use_cache=False)
    assert np.abs(cached.frames - fresh.frames).max() <= 1e-5
    assert cached.kv_projection_calls == [1, 1, 1] and fresh.kv_projection_calls == [25, 25, 25]
    assert cached.flow_branch_calls == 1
    full = run(model, clip, S=5, use_cache=True)
    full_nc = run(model, clip, S=5, use_cache=False)
    assert np.abs(full.frames - full_nc.frames).max() <= 1e-5


def test_flow_every_step_counts(model, clip):
    res = run(model, clip, steps=5, S=0, use_interpolation=False, use_cache=False, flow_every_step=True)
    assert res.flow_branch_calls == 5 and res.kv_projection_calls == [5, 5, 5]


def test_known_region_bit_exact(model, clip):
    for kw in ({"S": 3}, {"S": 3, "renoise": "fresh"}, {"S": 3, "renoise": "transplant"},
               {"S": 0, "use_flow": False, "use_interpolation": False}):
        res = run(model, clip, anchor=True, steps=8, **kw)
        known = np.broadcast_to(clip.mask == 1, res.frames.shape)
        np.testing.assert_array_equal(res.frames[known], clip.clip.frames[known])
        assert np.isfinite(res.frames).all()


def test_determinism(model, clip):
    a = run(model, clip, steps=8, S=3, seed=4)
    b = run(model, clip, steps=8, S=3, seed=4)
    c = run(model, clip, steps=8, S=3, seed=5)
    np.testing.assert_array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, c.frames)


def test_feature_off_equals_plain_ddim(model, clip):
    """S=0, cache off, adapters off: a hand-written DDIM inpainting loop."""
    steps = 10
    res = run(model, clip, steps=steps, S=0, use_interpolation=False, use_cache=False, use_flow=False,
              clip_denoised=False, seed=9)
    m, known = clip.mask, clip.masked
    eps_fixed = np.random.default_rng(9).standard_normal(known.shape).astype(np.float32)
    ts = SC.inference_timesteps(steps)
    z = m * sch.add_noise(SC, known, eps_fixed, ts[0]) + (1 - m) * eps_fixed
    prev = model.use_adapter
    model.use_adapter = False
    for k, t in enumerate(ts):
        tp = ts[k + 1] if k + 1 < steps else -1
        eps = model(DenoiserInput(z[None], m[None], (known * m)[None], t, [clip.clip.class_id])).data[0]
        z = sch.ddim_step(SC, z, eps, t, tp)
        z = m * sch.noise_at(SC, known, eps_fixed, tp) + (1 - m) * z
    model.use_adapter = prev
    np.testing.assert_allclose(res.frames, z, atol=1e-6)


def test_config_validation(model, clip):
    with pytest.raises(ValueError, match="S="):
        SamplerConfig(steps=5, S=5).validate()
    with pytest.raises(ValueError, match="renoise"):
        SamplerConfig(renoise="guess").validate()
    with pytest.raises(ValueError):
        SamplerConfig(use_cache=True, flow_every_step=True).validate()
    single = synth.make_sample(1, "br", N=1, H=8, W=8)
    with pytest.raises(ValueError, match="at least 2 frames"):
        Sampler(model, SC, SamplerConfig(S=2, steps=4)).sample(single.masked, single.mask, 0,
                                                              single.clip.flow)
    with pytest.raises(ValueError, match="flow"):
        Sampler(model, SC, SamplerConfig()).sample(clip.masked, clip.mask, 0, None)


def test_prepend_anchor_contract(rng):
    v = rng.standard_normal((16, 3, 8, 8)).astype(np.float32)
    m = np.zeros((16, 1, 8, 8), np.float32)
    a = rng.standard_normal((3, 8, 8)).astype(np.float32)
    v2, m2 = prepend_anchor(v, m, a)
    assert v2.shape[0] == 17 and (m2[0] == 1).all() and np.array_equal(v2[0], a)
    assert prepend_anchor(v, m, None)[0] is v
    with pytest.raises(ValueError, match="anchor shape"):
        prepend_anchor(v, m, a[:, :4])


def test_copy_paste_extremes(rng):
    z = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    z0 = rng.standard_normal(z.shape).astype(np.float32)
    e = rng.standard_normal(z.shape).astype(np.float32)
    ones, zeros = np.ones((2, 1, 4, 4), np.float32), np.zeros((2, 1, 4, 4), np.float32)
    np.testing.assert_array_equal(copy_paste(SC, z, z0, ones, 120, e), sch.add_noise(SC, z0, e, 120))
    np.testing.assert_array_equal(copy_paste(SC, z, z0, zeros, 120, e), z)
    np.testing.assert_array_equal(copy_paste(SC, z, z0, ones, -1, e), z0)


def test_warp_identity_flow_identical_neighbours(rng):
    f = rng.standard_normal((1, 3, 6, 6)).astype(np.float32)
    z0 = np.repeat(f, 3, axis=0)
    zero = np.zeros((2, 2, 6, 6), np.float32)
    out = warp_from_neighbours(z0, zero, zero, 1, {0, 2}, np.full_like(f[0], 9.0))
    np.testing.assert_array_equal(out, f[0])


def test_warp_reconstructs_rigid_translation():
    """Oracle denoiser: fresh neighbours are the true clean frames; the warped
    estimate matches the directly denoised (true) frame on valid pixels."""
    frames, flow = rigid_translation_clip((1, 2), N=5)
    sentinel = np.full_like(frames[0], 7.0)
    for i, sources in ((2, {1, 3}), (0, {1}), (4, {3})):
        out = warp_from_neighbours(frames, flow.forward, flow.backward, i, sources, sentinel)
        valid = out != 7.0
        assert valid.mean() > 0.6
        assert np.abs(out[valid] - frames[i][valid]).max() <= 1e-3


def test_warp_falls_back_without_sources(rng):
    z0 = rng.standard_normal((3, 3, 4, 4)).astype(np.float32)
    zero = np.zeros((2, 2, 4, 4), np.float32)
    fb = rng.standard_normal((3, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(warp_from_neighbours(z0, zero, zero, 1, set(), fb), fb)


def test_interpolation_halves_work_per_step(model, clip):
    """During interpolation only half of the 16 frames pass through the denoiser."""
    calls = []
    orig = type(model).forward

    def spy(self, inp, *a, **k):
        calls.append(np.asarray(inp.z_t).shape[-4])
        return orig(self, inp, *a, **k)
    type(model).__call__ = spy
    try:
        run(model, clip, steps=8, S=3)
    finally:
        type(model).__call__ = orig
    assert calls == [16, 8, 8, 8, 16, 16, 16, 16]


def test_adapter_off_keeps_flow_completion(model, clip):
    off = run(model, clip, steps=5, S=2, use_adapter=False)
    on = run(model, clip, steps=5, S=2)
    assert off.flow_branch_calls == 1 and off.kv_projection_calls == [0, 0, 0]
    assert off.frame_forwards == on.frame_forwards
    assert not np.array_equal(off.frames, on.frames)
