"""
Reverse-mode autodiff on numpy arrays
=====================================

Every model in the package is built from ``flowinpaint.tensor``. A Tensor
records the op that made it; ``backward()`` walks that tape in reverse.
Here we check one gradient by hand and then fit a tiny linear layer.
"""

import numpy as np

from flowinpaint import tensor as T
from flowinpaint.layers import Linear

rng = np.random.default_rng(0)

# d/dx sum(x * x) = 2x
x = T.Parameter(rng.standard_normal(5), "spatial")
T.sum_(x * x).backward()
print("autodiff:", np.round(x.grad, 4))
print("by hand: ", np.round(2 * x.data, 4))

# central differences on one entry, in float64 so rounding stays small
with T.precision(np.float64):
    w = T.Parameter(rng.standard_normal((3, 4)), "spatial")
    inp = rng.standard_normal((6, 3))

    def loss():
        y = T.silu(T.Tensor(inp) @ w)
        return T.mean(y * y)

    loss().backward()
    h = 1e-3
    w.data[1, 2] += h
    up = loss().item()
    w.data[1, 2] -= 2 * h
    down = loss().item()
    w.data[1, 2] += h
    print(f"dL/dw[1,2]: autodiff {w.grad[1, 2]:.6f}  finite difference {(up - down) / (2 * h):.6f}")

# fit y = A x with Adam
A = rng.standard_normal((4, 2)).astype(np.float32)
layer = Linear(rng, 4, 2, "spatial")
opt = T.Adam(layer.parameters(), lr=0.05)
for step in range(201):
    xb = rng.standard_normal((32, 4)).astype(np.float32)
    d = layer(xb) - xb @ A
    loss = T.mean(d * d)
    opt.zero_grad()
    loss.backward()
    opt.step()
    if step % 50 == 0:
        print(f"step {step:3d}  mse {loss.item():.5f}")
