"""A tour of the reverse-mode engine that backs every network in this package.

Builds a few small graphs, runs backward, and confirms each analytic gradient
against central finite differences — the same audit the `acfr grad-check`
command runs over the full model zoo.
"""

import numpy as np

from acfr import autodiff as ad
from acfr.autodiff import Tensor

rng = np.random.default_rng(0)

# a scalar chain: f(x) = tanh(x)^2 at x = 0.8
x = Tensor(0.8, requires_grad=True)
g = ad.tanh(x)
f = ad.mul(g, g)
f.backward()
manual = 2 * np.tanh(0.8) * (1 - np.tanh(0.8) ** 2)
print(f"f(x) = tanh(x)^2 at 0.8: value {f.item():.6f}")
print(f"  engine gradient  {float(x.grad):.10f}")
print(f"  hand   gradient  {manual:.10f}")

# a small regression graph: mse(relu(X W + b), y)
X = Tensor(rng.normal(size=(6, 4)))
y = Tensor(rng.normal(size=(6, 3)))
W = Tensor(rng.normal(size=(4, 3)) * 0.3, requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)
loss = ad.mse(ad.relu(ad.add(ad.matmul(X, W), b)), y)
loss.backward()
print(f"\nregression loss {loss.item():.6f}")
print(f"  dL/dW row 0: {np.round(W.grad[0], 4)}")
print(f"  dL/db:       {np.round(b.grad, 4)}")

# the independent oracle: central finite differences
err = ad.grad_check(
    lambda w: ad.mse(ad.relu(ad.add(ad.matmul(X, w), b.detach())), y),
    W.data, step=1e-5)
print(f"  finite-difference check, max relative error: {err:.2e}")

# softmax adjoint without materializing the Jacobian
logits = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
probs = ad.row_softmax(logits)
ad.mean(ad.mul(probs, probs)).backward()
print(f"\nsoftmax rows sum to {probs.data.sum(axis=1)}")
err = ad.grad_check(lambda t: ad.mean(ad.mul(ad.row_softmax(t), ad.row_softmax(t))),
                    logits.data)
print(f"softmax path finite-difference error: {err:.2e}")
