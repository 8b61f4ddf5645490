"""Driftless 1D bridge on a grid: unimodal start, bimodal target.

Solves the factor system, prints the interpolating densities, then steers
a batch of particles with the feedback control and compares their terminal
histogram with the target.
"""

import numpy as np

from bridgeflow import (GaussianMixture, Grid1D, classical_fixed_point, classical_propagate,
                        heat_kernel_matrix, make_rng)
from bridgeflow.classical import classical_control_at

eps = 0.5
rho0 = GaussianMixture([1.0], [[-1.5]], [[[0.3]]])
rho1 = GaussianMixture([0.5, 0.5], [[-1.0], [2.5]], [[[0.15]], [[0.2]]])
grid = Grid1D.uniform(-6.0, 6.0, 401)
x = grid.points

sol = classical_fixed_point(rho0.pdf(x[:, None]), rho1.pdf(x[:, None]), heat_kernel_matrix(grid, eps, 1.0))
print(f"fixed point: {sol.iterations} iterations, final Hilbert step {sol.history[-1]:.1e}")

for t in (0.0, 0.25, 0.5, 0.75, 1.0):
    rho = classical_propagate(sol.phi1, grid, eps, t, "phi") * classical_propagate(sol.phihat0, grid, eps, t, "phihat")
    mass = rho.sum() * grid.spacing
    mean = (x * rho).sum() * grid.spacing / mass
    print(f"t={t:.2f}  mass={mass:.6f}  mean={mean:+.3f}  mass right of 0.75: {rho[x > 0.75].sum() * grid.spacing / mass:.3f}")

# closed loop: dX = u dt + sqrt(2 eps) dW
rng = make_rng(0)
paths, dt = 2000, 1e-3
xs = rho0.sample(paths, rng)[:, 0]
for k in range(int(round(1 / dt))):
    u = classical_control_at(sol.phi1, grid, eps, k * dt, xs)
    xs = xs + u * dt + np.sqrt(2 * eps * dt) * rng.standard_normal(paths)
print(f"closed loop: {np.mean(xs > 0.75):.3f} of particles end in the right mode (target 0.5)")
