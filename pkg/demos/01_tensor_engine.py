"""Tour of the tensor engine: autodiff, adjointness, and gradient checking.

Run:  python demos/01_tensor_engine.py
"""

import numpy as np

from handcast import core
from handcast.core import ops

print("== A tiny training loop on the tape ==")
rng = np.random.default_rng(0)
w = core.Parameter(core.he_uniform(rng, (4, 8), 8), "demo.weights")
b = core.Parameter(np.zeros(4, dtype=np.float32), "demo.bias")
x = core.Tensor(rng.standard_normal((16, 8)).astype(np.float32))
target = core.Tensor(rng.standard_normal((16, 4)).astype(np.float32))

opt = core.Adam(lr=0.05)
for step in range(60):
    with core.Tape() as tape:
        loss = ops.mse_loss(ops.dense(x, w, b), target)
    tape.backward(loss)
    opt.step([w, b])
    if step % 20 == 0:
        print(f"  step {step:3d}: loss {float(loss.data):.4f}")
print(f"  final loss {float(loss.data):.4f} (least-squares fit)")

print("\n== Convolution and its exact adjoint ==")
with core.use_float64():
    x = core.tensor(rng.standard_normal((3, 10, 10)))
    k = core.tensor(rng.standard_normal((5, 3, 4, 4)))
    y = core.tensor(rng.standard_normal((5, 5, 5)))
    conv = ops.conv2d(x, k, None, stride=2, padding=1)
    tconv = ops.transposed_conv2d(y, k, None, stride=2, padding=1)
    lhs = float((conv.data * y.data).sum())
    rhs = float((x.data * tconv.data).sum())
    print(f"  <conv(x,k), y> = {lhs:.12f}")
    print(f"  <x, tconv(y,k)> = {rhs:.12f}")
    print(f"  difference      = {abs(lhs - rhs):.2e}")

print("\n== Finite-difference verification of a small network ==")
with core.use_float64():
    xin = core.tensor(rng.standard_normal((2, 6, 6)))
    kt = core.tensor(rng.standard_normal((3, 2, 3, 3)))
    wt = core.tensor(rng.standard_normal((4, 3 * 6 * 6)))
    tgt = core.tensor(np.zeros(4))

    def f(x_, k_, w_):
        h = ops.relu(ops.conv2d(x_, k_, None, 1, 1))
        return ops.mse_loss(ops.dense(ops.reshape(h, (3 * 6 * 6,)), w_, None), tgt)

    err = core.finite_difference_check(f, [xin, kt, wt])
    print(f"  worst relative gradient error: {err:.2e}")
