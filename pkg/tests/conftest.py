import numpy as np
import pytest

from flowinpaint import tensor as T
from flowinpaint.flow import FlowPair


def weighted_sum(out, seed=0):
    """Scalar probe loss sum(out * R) with a fixed random R."""
    R = np.random.default_rng(seed).standard_normal(out.shape)
    return T.sum_(out * R)


def gradcheck(loss_fn, params, n=20, h=1e-3, seed=0):
    """Largest relative error between autodiff and central differences over
    ``n`` randomly chosen parameter entries.

    Call inside ``T.precision(np.float64)`` so rounding noise does not swamp
    the h=1e-3 difference. Relative error is |a - n| / max(|a|, |n|, 1e-6).
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    sizes = np.array([p.size for p in params], dtype=float)
    worst = 0.0
    for _ in range(n):
        k = rng.choice(len(params), p=sizes / sizes.sum())
        p = params[k]
        idx = tuple(int(rng.integers(0, s)) for s in p.shape)
        analytic = 0.0 if p.grad is None else float(p.grad[idx])
        orig = p.data[idx].copy()
        with T.no_grad():
            p.data[idx] = orig + h
            hi, up = float(p.data[idx]), loss_fn().item()
            p.data[idx] = orig - h
            lo, down = float(p.data[idx]), loss_fn().item()
        p.data[idx] = orig
        numeric = (up - down) / (hi - lo)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst


def rigid_translation_clip(v=(2, 1), N=5, H=20, W=24, seed=0):
    """Whole-frame integer translation of a random texture: frame i+1 at p + v
    shows what frame i shows at p, and the forward flow is v everywhere."""
    big = np.random.default_rng(seed).uniform(-1, 1, (3, H + N * abs(v[1]), W + N * abs(v[0]))).astype(np.float32)
    cx, cy = (N - 1) * max(v[0], 0), (N - 1) * max(v[1], 0)
    frames = [big[:, cy - i * v[1]:cy - i * v[1] + H, cx - i * v[0]:cx - i * v[0] + W] for i in range(N)]
    fwd = np.zeros((N - 1, 2, H, W), np.float32)
    fwd[:, 0], fwd[:, 1] = v
    return np.stack(frames), FlowPair(fwd, -fwd)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one criterion's verdict: ``acceptance(n, passed, detail)``."""
    table = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(n, passed, detail):
        table[n] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(ACCEPTANCE_KEY, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(table):
        ok, detail = table[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
