"""Dense float32 tensors with tape-based reverse-mode autodiff.

Every op computes its forward value eagerly with numpy and, when gradients
are enabled and an input requires them, records a closure mapping the
output gradient to input gradients. ``Tensor.backward`` walks the recorded
graph in reverse topological order and then drops it, so each training
step starts from an empty tape.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Iterator, Sequence

import numpy as np

DTYPE = np.float32

_grad_enabled = True


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Run the tensor core in another float type (float64 for gradient checks).

    Tensors and parameters created inside the block use ``dtype``; the
    training and inference paths always run in the float32 default.
    """
    global DTYPE
    prev = DTYPE
    DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        DTYPE = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")
    __array_ufunc__ = None  # make ndarray (op) Tensor defer to Tensor's reflected ops

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph -------------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar-shaped, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward: loss does not depend on any tensor requiring grad")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones(self.shape, dtype=DTYPE)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in topo:
            if node._backward is not None:
                node._parents = ()
                node._backward = None

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    _check_finite(value, op)
    out = Tensor.__new__(Tensor)
    out.data = value if value.dtype == DTYPE else value.astype(DTYPE)
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a} and {b} do not broadcast") from None


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None)

    return _make(ad / bd, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0), (a,), lambda g: (g * mask,), "relu")


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def bw(g):
        return (g * (sig * (1.0 + a.data * (1.0 - sig))),)

    return _make(out, (a,), bw, "silu")


# -- contraction ----------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    a_vec, b_vec = a.ndim == 1, b.ndim == 1
    ad = a.data[None, :] if a_vec else a.data
    bd = b.data[:, None] if b_vec else b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(ad.shape[:-2], bd.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    out = ad @ bd

    def bw(g):
        if a_vec:
            g = np.expand_dims(g, -2)
        if b_vec:
            g = np.expand_dims(g, -1)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape).reshape(a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape).reshape(b.shape)
        return ga, gb

    if a_vec:
        out = out.squeeze(-2)
    if b_vec:
        out = out.squeeze(-1)
    return _make(out, (a, b), bw, "matmul")


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis; leading dims are flattened for one GEMM."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    parents = (x, w)
    if b is not None:
        out = out + b.data
        parents = (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    return _make(out.reshape(lead + (w.shape[1],)), parents, bw, "linear")


# -- reductions -----------------------------------------------------------
def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(DTYPE),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


# -- structural -------------------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    src = a.shape
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
                i != ax and x != y for i, (x, y) in enumerate(zip(t.shape, ref))):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, sizes, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), bw, "concat")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    shape = a.shape

    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.ascontiguousarray(out), (a,), bw, "slice")


slice_ = getitem


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: {a.shape} cannot broadcast to {tuple(shape)}") from None
    src = a.shape
    return _make(np.ascontiguousarray(out), (a,), lambda g: (_unbroadcast(g, src),), "broadcast")


# -- fused layers -----------------------------------------------------------
def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * weight.data + bias.data
    n = x.shape[-1]

    def bw(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g * xhat).reshape(-1, n).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, n).sum(axis=0)
        if x.requires_grad:
            gh = g * weight.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gw, gb

    return _make(out, (x, weight, bias), bw, "layer_norm")


# Shifted logits are floored here before exp. Sharp attention otherwise
# underflows into denormal floats, which slows every later op several times
# over; the probabilities change by at most e^-60.
LOGIT_FLOOR = -60.0


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    e = np.exp(np.maximum(x.data - x.data.max(axis=axis, keepdims=True), LOGIT_FLOOR))
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (x,), bw, "softmax")


def softmax_attention(q, k, v, scale: float) -> Tensor:
    """softmax(q kᵀ · scale) v over the last two axes; leading axes broadcast."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"softmax_attention: query {q.shape} and key {k.shape} channels differ")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"softmax_attention: key {k.shape} and value {v.shape} token counts differ")
    try:
        np.broadcast_shapes(q.shape[:-2], k.shape[:-2], v.shape[:-2])
    except ValueError:
        raise ShapeError(
            f"softmax_attention: batch dims of {q.shape}, {k.shape}, {v.shape} do not broadcast") from None
    logits = (q.data @ np.swapaxes(k.data, -1, -2)) * DTYPE(scale)
    _check_finite(logits, "softmax_attention logits")
    logits -= logits.max(axis=-1, keepdims=True)
    np.maximum(logits, LOGIT_FLOOR, out=logits)
    p = np.exp(logits, out=logits)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ v.data

    def bw(g):
        gq = gk = gv = None
        if v.requires_grad:
            gv = _unbroadcast(np.swapaxes(p, -1, -2) @ g, v.shape)
        if q.requires_grad or k.requires_grad:
            dp = g @ np.swapaxes(v.data, -1, -2)
            ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
            ds *= DTYPE(scale)
            if q.requires_grad:
                gq = _unbroadcast(ds @ k.data, q.shape)
            if k.requires_grad:
                gk = _unbroadcast(np.swapaxes(ds, -1, -2) @ q.data, k.shape)
        return gq, gk, gv

    return _make(out, (q, k, v), bw, "softmax_attention")


def conv3x3(x, w, b) -> Tensor:
    """Same-padded 3×3 convolution on channels-last input ``(..., H, W, Cin)``.

    ``w`` has shape ``(9 * Cin, Cout)`` with taps ordered row-major over the
    3×3 window and channels fastest.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    *lead, H, W, C = x.shape
    if w.shape[0] != 9 * C:
        raise ShapeError(f"conv3x3: input {x.shape} does not match weight {w.shape}")
    xs = x.data.reshape(-1, H, W, C)
    xp = np.pad(xs, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, i:i + H, j:j + W, :] for i in range(3) for j in range(3)], axis=-1)
    cols2 = cols.reshape(-1, 9 * C)
    out = cols2 @ w.data + b.data
    cout = w.shape[1]

    def bw(g):
        g2 = g.reshape(-1, cout)
        gx = gw = gb = None
        if w.requires_grad:
            gw = cols2.T @ g2
        if b.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gc = (g2 @ w.data.T).reshape(-1, H, W, 9, C)
            gp = np.zeros_like(xp)
            tap = 0
            for i in range(3):
                for j in range(3):
                    gp[:, i:i + H, j:j + W, :] += gc[:, :, :, tap, :]
                    tap += 1
            gx = np.ascontiguousarray(gp[:, 1:H + 1, 1:W + 1, :]).reshape(x.shape)
        return gx, gw, gb

    return _make(out.reshape(tuple(lead) + (H, W, cout)), (x, w, b), bw, "conv3x3")


def avg_pool2(x) -> Tensor:
    """2×2 mean pooling over the H, W axes of ``(..., H, W, C)``."""
    x = as_tensor(x)
    *lead, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avg_pool2: spatial dims of {x.shape} must be even")
    out = x.data.reshape(-1, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))

    def bw(g):
        g = g.reshape(-1, H // 2, 1, W // 2, 1, C) * 0.25
        return (np.broadcast_to(g, (g.shape[0], H // 2, 2, W // 2, 2, C)).reshape(x.shape),)

    return _make(out.reshape(tuple(lead) + (H // 2, W // 2, C)), (x,), bw, "avg_pool2")


def upsample2(x) -> Tensor:
    """Nearest-neighbour 2× upsampling over the H, W axes of ``(..., H, W, C)``."""
    x = as_tensor(x)
    *lead, H, W, C = x.shape
    xs = x.data.reshape(-1, H, 1, W, 1, C)
    out = np.broadcast_to(xs, (xs.shape[0], H, 2, W, 2, C)).reshape(tuple(lead) + (2 * H, 2 * W, C))

    def bw(g):
        return (g.reshape(-1, H, 2, W, 2, C).sum(axis=(2, 4)).reshape(x.shape),)

    return _make(np.ascontiguousarray(out), (x,), bw, "upsample2")


# -- parameters and modules ---------------------------------------------------
GROUPS = ("spatial", "motion", "flow_branch", "adapter", "condition")


class Parameter(Tensor):
    __slots__ = ("group",)

    def __init__(self, data, group: str):
        if group not in GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        super().__init__(data, requires_grad=True)
        self.group = group


class Module:
    """Container whose parameters are discovered from attributes, in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, val in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(val, Parameter):
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def param_groups(self) -> dict[str, "ParamGroup"]:
        groups = {g: ParamGroup(g, []) for g in GROUPS}
        for p in self.parameters():
            groups[p.group].params.append(p)
        for g in groups.values():
            g.trainable = bool(g.params) and all(p.requires_grad for p in g.params)
        return groups

    def set_trainable(self, groups: Iterable[str]) -> None:
        wanted = set(groups)
        for p in self.parameters():
            p.requires_grad = p.group in wanted
            if not p.requires_grad:
                p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class ParamGroup:
    def __init__(self, name: str, params: list, trainable: bool = False):
        self.name = name
        self.params = params
        self.trainable = trainable

    def __repr__(self):
        return f"ParamGroup({self.name!r}, n={len(self.params)}, trainable={self.trainable})"


class Adam:
    """Adam over parameters that currently require grad; others are never touched."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, grad_clip: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        live = [i for i, p in enumerate(self.params) if p.requires_grad and p.grad is not None]
        if not live:
            return
        self.t += 1
        scale = 1.0
        if self.grad_clip:
            norm = np.sqrt(sum(float((self.params[i].grad.astype(np.float64) ** 2).sum()) for i in live))
            if norm > self.grad_clip:
                scale = self.grad_clip / (norm + 1e-12)
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i in live:
            p = self.params[i]
            g = p.grad * DTYPE(scale)
            m, v = self.m[i], self.v[i]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(DTYPE)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for i in range(len(self.params)):
            self.m[i][...] = arrays[f"m.{i}"]
            self.v[i][...] = arrays[f"v.{i}"]
        self.t = t
