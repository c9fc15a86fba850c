"""Tour of the numerical substrate: tensors, gradients, layers, optimizer.

Run:  python demos/01_autodiff_and_layers.py
"""

import numpy as np

from oncode.nn import AdamState, adam_step, init_mlp, mlp_forward, mse_loss, zero_grads
from oncode.tensor import Tensor, autodiff_eval, gradient_check, parameter, softmax

# Every Tensor records the op that made it; backward() walks the tape.
out, grads = autodiff_eval(lambda x: x * x * x, {"x": np.array(2.0)})
print(f"d/dx x^3 at 2:   value={out.item():g}   gradient={grads['x']:g}  (exact: 12)")

# gradient_check compares reverse-mode against central finite differences.
report = gradient_check(lambda a, b: ((a @ b).tanh() ** 2).sum(),
                        {"a": np.random.default_rng(0).normal(size=(3, 4)),
                         "b": np.random.default_rng(1).normal(size=(4,))})
print(report)

# softmax is max-shifted for stability and exactly normalized.
s = softmax(Tensor([1.0, 2.0, 3.0]))
print("softmax([1,2,3]) =", np.round(s.data, 6), " sum =", s.data.sum())

# A small MLP fit with the adaptive optimizer: y = sin(x) on [-2, 2].
rng = np.random.default_rng(42)
mlp = init_mlp([1, 16, 16, 1], ["tanh", "tanh", "identity"], rng)
params = mlp.named("mlp")
xs = np.linspace(-2, 2, 64).reshape(-1, 1)
ys = np.sin(xs)

state = AdamState(lr=1e-2)
for epoch in range(400):
    zero_grads(params)
    loss = mse_loss(mlp_forward(mlp, Tensor(xs)), ys)
    loss.backward()
    adam_step(state, params)
    if epoch % 100 == 0 or epoch == 399:
        print(f"epoch {epoch:3d}  mse={loss.item():.6f}")

pred = mlp_forward(mlp, Tensor(xs)).data
print("max |error| after training:", float(np.max(np.abs(pred - ys))))
