import numpy as np
import pytest

from flowinpaint import tensor as T
from flowinpaint.denoiser import STAGE_GROUPS, DenoiserInput, TemporalAttention, VideoDenoiser, count_parameters
from flowinpaint.flow import FlowPair, complete_flow, estimate_corrupted_flow, flow_loss


def small(seed=0):
    return VideoDenoiser(seed=seed, widths=(8, 16, 16), cond_dim=8, temb_dim=16)


def _inputs(rng, F=3, B=None, H=8):
    shape = (F, 3, H, H) if B is None else (B, F, 3, H, H)
    z = rng.standard_normal(shape).astype(np.float32)
    m = (rng.random(shape[:-3] + (1, H, H)) > 0.4).astype(np.float32)
    return z, m


def _perturb(model, rng, scale=0.2):
    """Give zero-initialised weights (temporal out, head, gammas) non-trivial values."""
    for p in model.parameters():
        if not p.data.any():
            p.data[...] = rng.standard_normal(p.shape) * scale


def test_output_shape_contract(rng):
    m = small()
    m.use_adapter = False
    z, mk = _inputs(rng, F=5)
    assert m(DenoiserInput(z, mk, z * mk, 10, 1)).shape == (5, 3, 8, 8)
    zb, mb = _inputs(rng, F=2, B=3)
    assert m(DenoiserInput(zb, mb, zb * mb, np.array([1, 2, 3]), [0, 1, 8])).shape == (3, 2, 3, 8, 8)


def test_input_errors(rng):
    m = small()
    m.use_adapter = False
    z, mk = _inputs(rng, H=6)
    with pytest.raises(T.ShapeError, match="divisible"):
        m(DenoiserInput(z, mk, z * mk, 0, 0))
    z, mk = _inputs(rng)
    with pytest.raises(ValueError, match="binary"):
        m(DenoiserInput(z, mk * 0.5, z, 0, 0))
    with pytest.raises(ValueError, match="condition"):
        m(DenoiserInput(z, mk, z, 0, 9))
    with pytest.raises(T.ShapeError, match="channels"):
        m(DenoiserInput(z[:, :2], mk, z[:, :2], 0, 0))
    m.use_adapter = True
    with pytest.raises(ValueError, match="flow_feats or a filled memory bank"):
        m(DenoiserInput(z, mk, z, 0, 0))


def test_stages_select_trainable_groups():
    m = small()
    m.set_stage(1)
    assert m.trainable_groups() == {"motion"}
    m.set_stage(2)
    assert m.trainable_groups() == {"motion", "flow_branch", "adapter"}
    m.set_stage(0)
    assert m.trainable_groups() == {"spatial", "condition"}
    with pytest.raises(ValueError, match="unknown training stage"):
        m.set_stage(3)
    assert set(STAGE_GROUPS) == {0, 1, 2}


def test_parameter_groups_cover_model():
    counts = count_parameters(VideoDenoiser())
    assert set(counts) == {"spatial", "motion", "flow_branch", "adapter", "condition"}
    assert all(v > 0 for v in counts.values())


def test_temporal_attention_loop_oracle(rng):
    ta = TemporalAttention(rng, 8, max_frames=6)
    _perturb(ta, rng)
    x = rng.standard_normal((2, 4, 3, 3, 8)).astype(np.float32)
    out = ta(x).data
    a = ta.attn
    for b in range(2):
        for i in range(3):
            for j in range(3):
                seq = x[b, :, i, j] + ta.pos.data[:4]
                mu, var = seq.mean(-1, keepdims=True), seq.var(-1, keepdims=True)
                h = (seq - mu) / np.sqrt(var + 1e-5) * a.norm.w.data + a.norm.b.data
                q, k, v = h @ a.q.w.data, h @ a.k.w.data, h @ a.v.w.data
                s = q @ k.T * a.scale
                w = np.exp(s - s.max(-1, keepdims=True))
                w /= w.sum(-1, keepdims=True)
                expect = x[b, :, i, j] + (w @ v) @ a.o.w.data + a.o.b.data
                np.testing.assert_allclose(out[b, :, i, j], expect, atol=1e-5)


def test_temporal_attention_permutation_equivariance(rng):
    ta = TemporalAttention(rng, 8, max_frames=6)
    _perturb(ta, rng)
    x = rng.standard_normal((1, 5, 2, 2, 8)).astype(np.float32)
    perm = np.array([3, 0, 4, 1, 2])
    out = ta(x).data
    out_p = ta(x[:, perm], frame_idx=perm).data
    np.testing.assert_allclose(out_p, out[:, perm], atol=1e-5)


def test_motion_layers_are_identity_at_init(rng):
    """Zero-initialised temporal outputs: each frame is denoised independently."""
    m = small()
    m.use_adapter = False
    m.head.w.data[...] = rng.standard_normal(m.head.w.shape) * 0.1
    z, mk = _inputs(rng, F=4)
    full = m(DenoiserInput(z, mk, z * mk, 100, 2)).data
    for f in range(4):
        one = m(DenoiserInput(z[f:f + 1], mk[f:f + 1], z[f:f + 1] * mk[f:f + 1], 100, 2)).data
        np.testing.assert_allclose(one[0], full[f], atol=1e-5)


def _flow_feats(m, rng, F=3, H=8):
    fwd = rng.standard_normal((F - 1, 2, H, H)).astype(np.float32)
    mk = (rng.random((F, 1, H, H)) > 0.3).astype(np.float32)
    cor, _ = estimate_corrupted_flow(np.zeros((F, 3, H, H)), mk, FlowPair(fwd, -fwd))
    return complete_flow(m.flow_branch, cor, mk)[1]


def test_zero_gamma_adapter_leaves_output_unchanged(rng):
    m = small()
    _perturb(m, rng)
    for layer in m.adapter.layers:
        layer.gamma.data[:] = 0.0
    z, mk = _inputs(rng)
    inp = DenoiserInput(z, mk, z * mk, 300, 4)
    m.use_adapter = False
    off = m(inp).data
    m.use_adapter = True
    on = m(inp, flow_feats=_flow_feats(m, rng)).data
    np.testing.assert_array_equal(on, off)


def test_bank_path_equals_fresh_path(rng):
    m = small()
    _perturb(m, rng)
    z, mk = _inputs(rng)
    feats = _flow_feats(m, rng)
    inp = DenoiserInput(z, mk, z * mk, 300, 4)
    fresh = m(inp, flow_feats=feats).data
    bank = m.adapter.fill_bank(feats)
    cached = m(inp, bank=bank).data
    assert np.abs(fresh - cached).max() <= 1e-6
    m.use_adapter = False
    assert not np.array_equal(fresh, m(inp).data)      # the adapter is actually active


def test_anchor_maps_frames_to_real_pairs(rng):
    """With an anchor at position 0, frames 0 and 1 both attend to real frame 0's pairs."""
    m = small()
    _perturb(m, rng)
    z, mk = _inputs(rng, F=4)
    feats = _flow_feats(m, rng, F=3)
    out = m(DenoiserInput(z, mk, z * mk, 50, 1, anchor=True), flow_feats=feats).data
    assert out.shape == z.shape and np.isfinite(out).all()


def test_stage2_gradient_reaches_every_adapter_and_flow_parameter(rng):
    m = small()
    m.head.w.data[...] = rng.standard_normal(m.head.w.shape) * 0.1    # stands in for a trained stage-0 head
    m.set_stage(2)
    opt = T.Adam([p for p in m.parameters() if p.requires_grad], lr=1e-2)
    z, mk = _inputs(rng, F=3, B=1)
    eps = rng.standard_normal(z.shape).astype(np.float32)
    gt = rng.standard_normal((2, 4, 8, 8)).astype(np.float32)
    hole = np.maximum(1 - mk[0, :-1], 1 - mk[0, 1:])
    cor = gt * (1 - hole)

    def step():
        opt.zero_grad()
        pred, feats = m.flow_branch(cor, hole)
        out = m(DenoiserInput(z, mk, z * mk, 400, 3), flow_feats=feats)
        d = out - eps
        loss = T.mean(d * d) + flow_loss(pred, gt) * 0.1
        loss.backward()

    step()
    opt.step()          # gammas and flow head leave zero, opening every path
    step()
    for name, p in m.named_parameters():
        if p.group in ("adapter", "flow_branch"):
            assert p.grad is not None and np.linalg.norm(p.grad) > 0, name
        if p.group in ("spatial", "condition"):
            assert p.grad is None, name
