"""Tour of the tensor core: tape recording, backward, gradient checking.

Run:  python3 demos/01_tape_autodiff.py
"""

import numpy as np

from canet import Tape, Tensor, backward, grad_check, matmul, multiply, sigmoid, tensor_sum

# Build a tiny expression: loss = sum(sigmoid(x @ w) * x @ w-ish shapes).
# Any op touching a requires_grad tensor while a Tape is active gets recorded.
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
w = Tensor(rng.standard_normal((3, 2)), requires_grad=True, dtype=np.float64)

with Tape() as tape:
    z = matmul(x, w)
    y = sigmoid(z)
    loss = tensor_sum(y)

print(f"recorded {len(tape.nodes)} tape nodes")
grads = backward(loss, tape)
print("loss =", float(loss.data))
print("dL/dw =\n", grads[w])

# The same quantity by central differences, via the built-in checker.
# grad_check reports max |analytic - numeric| / max(1, |numeric|).
err = grad_check(lambda t: tensor_sum(sigmoid(matmul(x, t))), w)
print(f"gradient check vs central differences: max rel err = {err:.2e}")

# Gradients accumulate across backward calls until reset - the trainer
# resets between steps, but the behaviour is easy to see directly:
v = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
with Tape() as tape:
    loss = tensor_sum(multiply(v, v))
backward(loss, tape)
print("after one backward:  dv =", v.grad)   # 2v = 4
backward(loss, tape)
print("after two backwards: dv =", v.grad)   # accumulated to 8
