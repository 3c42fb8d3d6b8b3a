"""A short walk through the tensor engine: build a graph, differentiate it,
and compare the result against central differences."""

import numpy as np

from hetskel.autodiff import Adam, Linear, Tensor, gelu, gradient_check, layer_norm

rng = np.random.default_rng(0)

# a scalar function of two leaves
a = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="a")
b = Tensor(rng.normal(size=(4, 2)), requires_grad=True, name="b")
out = gelu(a @ b).sum()
out.backward()
print("f(a, b) =", float(out.data))
print("df/db =\n", b.grad)

# the same function checked numerically
err = gradient_check(lambda: gelu(a @ b).sum(), [a, b], h=1e-4)
print(f"max relative error vs finite differences: {err:.2e}")

# layer norm over the last axis, checked the same way
x = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
w = Tensor(1.0 + 0.1 * rng.normal(size=6), requires_grad=True)
bias = Tensor(0.1 * rng.normal(size=6), requires_grad=True)
err = gradient_check(lambda: (layer_norm(x, w, bias) ** 2).sum(), [x, w, bias])
print(f"layer norm gradient error: {err:.2e}")

# a few Adam steps on a least-squares fit
layer = Linear(3, 1, rng)
opt = Adam(layer.named_parameters(), lr=0.05)
xs = Tensor(rng.normal(size=(64, 3)))
ys = Tensor(xs.data @ np.array([[1.0], [-2.0], [0.5]]) + 0.3)
for step in range(201):
    loss = ((layer(xs) - ys) ** 2).mean()
    loss.backward()
    opt.step()  # also clears the gradients
    if step % 50 == 0:
        print(f"step {step:3d}  mse {float(loss.data):.5f}")
