"""
A small MLP, its gradient, and its Fisher diagonal
==================================================

Everything the simulator trains is a flat parameter vector for a ReLU MLP.
This script builds one, checks the analytic gradient against finite
differences and looks at the empirical Fisher diagonal that later becomes
the weight of each quadratic penalty.
"""

import numpy as np

from elastic_fcl import LabeledSet, MlpSpec, fisher_diagonal, grad_mse, init_model, mse_loss

# a 4-input network with two hidden layers, the same shape the simulator uses
spec = MlpSpec((4, 8, 8, 1))
theta = init_model(spec, seed=0)
print("parameters:", spec.n_params)

rng = np.random.default_rng(1)
X = rng.uniform(-1, 1, (64, 4))
y = 0.5 + 0.5 * np.tanh(X @ np.array([1.0, -0.5, 0.3, 0.0]))
data = LabeledSet(X, y)
print("initial MSE: %.4f" % mse_loss(spec, theta, data))

# central differences, one coordinate at a time
g = grad_mse(spec, theta, data)
h = 1e-5
fd = np.empty_like(theta)
for k in range(theta.size):
    e = np.zeros_like(theta)
    e[k] = h
    fd[k] = (mse_loss(spec, theta + e, data) - mse_loss(spec, theta - e, data)) / (2 * h)
print("max |analytic - finite difference|: %.2e" % np.max(np.abs(g - fd)))

# a few hundred plain gradient steps
for _ in range(300):
    theta = theta - 0.1 * grad_mse(spec, theta, data)
print("MSE after 300 steps: %.4f" % mse_loss(spec, theta, data))

# The empirical Fisher is the mean squared per-sample gradient. Large entries
# mark parameters the fit depends on; a penalty weighted by them holds those
# parameters in place while leaving the rest free.
F = fisher_diagonal(spec, theta, data)
order = np.argsort(F)[::-1]
print("largest Fisher entries:", np.round(F[order[:5]], 5))
print("share of Fisher mass in the top 10%% of parameters: %.2f"
      % (F[order[: spec.n_params // 10]].sum() / F.sum()))

# row order never changes the result, bit for bit
perm = rng.permutation(len(data))
print("permutation invariant:", np.array_equal(F, fisher_diagonal(spec, theta, data.subset(perm))))
