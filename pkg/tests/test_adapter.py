import numpy as np
import pytest

from flowinpaint import tensor as T
from flowinpaint.adapter import AdapterLayer, BankError, FlowAdapter, MemoryBank, pair_index


def _feats(rng, P=3):
    return [rng.standard_normal((P, 2, 2, 16)).astype(np.float32),
            rng.standard_normal((P, 4, 4, 8)).astype(np.float32),
            rng.standard_normal((P, 8, 8, 4)).astype(np.float32)]


def _hidden(rng, F=4):
    return [rng.standard_normal((1, F, 2, 2, 16)).astype(np.float32),
            rng.standard_normal((1, F, 4, 4, 8)).astype(np.float32),
            rng.standard_normal((1, F, 8, 8, 4)).astype(np.float32)]


def _adapter(rng, gamma=0.5):
    ad = FlowAdapter(rng, (16, 8, 4), (16, 8, 4))
    for layer in ad.layers:
        layer.gamma.data[:] = gamma
    return ad


def test_gamma_zero_is_exact_noop(rng):
    ad = _adapter(rng, gamma=0.0)
    pidx = pair_index(np.arange(4), 3)
    feats = _feats(rng)
    for s, h in enumerate(_hidden(rng)):
        np.testing.assert_array_equal(ad.attend(T.Tensor(h), feats, s, pidx).data, h)


def test_bank_equals_recompute(rng):
    ad = _adapter(rng)
    feats, hidden = _feats(rng), _hidden(rng)
    pidx = pair_index(np.arange(4), 3)
    bank = ad.fill_bank(feats)
    for s in range(3):
        fresh = ad.attend(T.Tensor(hidden[s]), feats, s, pidx).data
        cached = ad.attend(T.Tensor(hidden[s]), bank, s, pidx).data
        assert np.abs(fresh - cached).max() <= 1e-6


def test_single_flow_token_copies_value(rng):
    layer = AdapterLayer(rng, 8, 5)
    layer.gamma.data[:] = 1.0
    f = rng.standard_normal((1, 1, 1, 5)).astype(np.float32)
    h = rng.standard_normal((1, 2, 3, 3, 8)).astype(np.float32)
    k, v = layer.project(f)
    out = layer(T.Tensor(h), k, v, pair_index(np.arange(2), 1)).data
    np.testing.assert_allclose(out - h, np.broadcast_to(v.data.reshape(8), h.shape), atol=1e-6)


def test_fill_bank_shapes_and_counters(rng):
    ad = _adapter(rng)
    feats = _feats(rng)
    bank = ad.fill_bank(feats)
    assert bank.filled == [True] * 3 and ad.projection_calls == [1, 1, 1]
    for s, f in enumerate(feats):
        k, v = bank.get(s)
        kk, vv = ad.layers[s].project(f)
        assert k.shape == kk.shape == (3, f.shape[1] * f.shape[2], ad.layers[s].q.w.shape[1])
        assert v.shape == vv.shape
    ad.reset_counters()
    pidx = pair_index(np.arange(4), 3)
    for s, h in enumerate(_hidden(rng)):
        ad.attend(T.Tensor(h), bank, s, pidx)
    assert ad.projection_calls == [0, 0, 0]


def test_bank_is_write_once_and_read_only(rng):
    ad = _adapter(rng)
    bank = ad.fill_bank(_feats(rng))
    with pytest.raises(BankError):
        ad.fill_bank(_feats(rng), bank)
    with pytest.raises(BankError):
        bank.put(0, np.zeros((1, 1, 16)), np.zeros((1, 1, 16)))
    k, _ = bank.get(1)
    with pytest.raises(ValueError):
        k[0, 0, 0] = 1.0


def test_unfilled_bank_errors(rng):
    ad = _adapter(rng)
    bank = MemoryBank(3)
    with pytest.raises(BankError, match="not been filled"):
        ad.attend(T.Tensor(_hidden(rng)[0]), bank, 0, pair_index(np.arange(4), 3))
    with pytest.raises(BankError):
        bank.get(5)
    with pytest.raises(ValueError):
        ad.attend(T.Tensor(_hidden(rng)[0]), _feats(rng), 3, pair_index(np.arange(4), 3))
    with pytest.raises(ValueError):
        ad.fill_bank(_feats(rng)[:2])


def test_pair_index_boundaries():
    np.testing.assert_array_equal(pair_index(np.arange(4), 3), [[0, 0], [0, 1], [1, 2], [2, 2]])
    np.testing.assert_array_equal(pair_index([0, 1], 1), [[0, 0], [0, 0]])
    with pytest.raises(ValueError):
        pair_index([0], 0)


def test_boundary_repeat_equals_single_pair(rng):
    """A boundary frame attending to its one pair twice equals attending to it once."""
    layer = AdapterLayer(rng, 8, 5)
    layer.gamma.data[:] = 1.0
    f = rng.standard_normal((2, 2, 2, 5)).astype(np.float32)
    h = rng.standard_normal((1, 1, 2, 2, 8)).astype(np.float32)
    k, v = layer.project(f)
    twice = layer(T.Tensor(h), k, v, np.array([[0, 0]])).data
    q = layer.q(layer.norm(T.Tensor(h))).reshape(1, 1, 4, 8)
    once = T.softmax_attention(q, k[np.array([0])].reshape(1, 4, 8), v[np.array([0])].reshape(1, 4, 8),
                               layer.scale).data.reshape(h.shape)
    np.testing.assert_allclose(twice, h + once, atol=1e-6)
