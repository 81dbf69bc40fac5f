"""The reverse-mode tape behind training, checked against finite differences.

Run: python demos/02_autodiff_tape.py
"""
import numpy as np

from netude import autodiff as ad
from netude.dynamics import CYCLE3, simulate_oscillators
from netude.model import init_model
from netude.training import loss_and_grad, make_windows

# A scalar function of a weight matrix, recorded op by op on a tape
rng = np.random.default_rng(0)
tape = ad.Tape()
W = tape.leaf(rng.normal(size=(3, 2)), trainable=True)
x = tape.leaf(rng.normal(size=(4, 2)))            # data, not trained
b = tape.leaf(np.zeros(3), trainable=True)
y = ad.sum(ad.square(ad.leaky_relu(ad.linear(x, W, b), 0.01)))
grads = tape.backward(y)
print("tape length:", len(tape.nodes), " loss:", float(y.value))
print("dL/dW =\n", grads[W])

# Replaying the tape reproduces every stored value bit for bit
print("replay exact:", all(np.array_equal(n.value, v) for n, v in zip(tape.nodes, tape.replay())))

# The same machinery differentiates the forecasting loss through 5 RK4
# steps of the hybrid model. Compare a few coordinates with central differences.
batch = make_windows(simulate_oscillators(CYCLE3, 12, 0.1, seed=2), 5)
model = init_model(3, seed=1)
model.params["adj.logits"] = rng.normal(size=9)
alpha = 1e-2
total, mse, pen, g = loss_and_grad(model, batch, alpha)
print(f"\nloss {total:.6f} = mse {mse:.6f} + {alpha} * {pen:.4f}")

h = 1e-6
for name, idx in (("nn1.W0", 7), ("nn2.W1", 2), ("adj.logits", 1)):
    up, dn = model.copy(), model.copy()
    up.params[name].ravel()[idx] += h
    dn.params[name].ravel()[idx] -= h
    fd = (loss_and_grad(up, batch, alpha)[0] - loss_and_grad(dn, batch, alpha)[0]) / (2 * h)
    an = g[name].ravel()[idx]
    print(f"{name:>10}[{idx}]  tape {an: .10e}  fd {fd: .10e}  rel {abs(an - fd) / abs(fd):.1e}")
