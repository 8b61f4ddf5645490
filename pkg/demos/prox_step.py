"""One Wasserstein proximal step on a random cloud.

Shows the three properties the bridge solver leans on: the step keeps total
mass, its output scales linearly with the input, and the dual iteration
contracts in the Hilbert metric.
"""

import numpy as np

from bridgeflow import ProxProblem, cost_matrix_euclidean, prox_step

rng = np.random.default_rng(3)
n, h, eps, gamma = 60, 1e-2, 1.0, 0.5
x_prev = rng.normal(size=(n, 2))
x_next = x_prev + np.sqrt(2 * eps * h) * rng.normal(size=(n, 2))
a = np.exp(-0.5 * np.sum(x_prev**2, axis=1))
v = 0.5 * np.sum(x_prev**2, axis=1)

prob = ProxProblem(a, cost_matrix_euclidean(x_prev, x_next), v, h, eps, gamma)
sol = prox_step(prob, tol_pr=1e-12, max_iter_pr=5000, track_hilbert=True)
print(f"iterations {sol.iterations}, marginal residual {sol.marginal_residual:.1e}")
print(f"mass in {a.sum():.12f}  mass out {sol.next_values.sum():.12f}")

double = prox_step(ProxProblem(2 * a, prob.cost, v, h, eps, gamma), tol_pr=1e-12, max_iter_pr=5000)
print(f"max |phi(2a) / phi(a) - 2| = {np.max(np.abs(double.next_values / sol.next_values - 2)):.1e}")

hist = np.array(sol.hilbert_history)
print("Hilbert distance between successive w iterates:")
for k in (0, 1, 2, 5, 10, 20):
    if k < hist.size:
        print(f"  sweep {k + 1:3d}: {hist[k]:.3e}")
