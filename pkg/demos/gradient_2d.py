"""Bridge under a double-well gradient prior in 2D.

The prior pulls mass toward x1 = +-1; the target splits the start into two
lobes at x2 = +-2.  Run with small sizes so it finishes in seconds; the
shipped configs/gradient_2d.yaml is the full-size version for the CLI.
"""

import numpy as np

from bridgeflow import (GaussianMixture, GradientDrift, PolynomialPotential, SbpConfig, compose_density,
                        run_endpoint_fixed_point)
from bridgeflow.interp import tensor_grid

# V = 1/4 (1 + x1^4) + 1/2 (x2^2 - x1^2)
pot = PolynomialPotential(2, [(0.25, (0, 0)), (0.25, (4, 0)), (0.5, (0, 2)), (-0.5, (2, 0))])
model = GradientDrift(pot, 2)
rho0 = GaussianMixture([1.0], [[-2.0, 0.0]], [np.diag([0.8, 0.7])])
rho1 = GaussianMixture([0.5, 0.5], [[1.5, 2.0], [1.5, -2.0]], [np.diag([0.5, 0.8]), np.diag([0.7, 0.8])])

cfg = SbpConfig(epsilon=6.0, tau=1e-2, sigma=1e-2, num_steps=100, num_samples=150,
                tol_sb=0.1, tol_pr=1e-3, seed=0)
state = run_endpoint_fixed_point(model, rho0, rho1, cfg,
                                 on_iteration=lambda r: print(f"outer {r['iter']}: W2^2 residuals {r['residual_phihat0']:.2e}, {r['residual_p0']:.2e}"))
print(f"converged after {state.iteration} outer iterations")

_, pts = tensor_grid([(-5.0, 5.0), (-5.0, 5.0)], (41, 41))
for name, phi, hat, target in (("t=0", state.phi0, state.phihat0, rho0), ("t=1", state.phi1, state.phihat1, rho1)):
    dens = compose_density(phi, hat, pts)
    dens = dens / dens.sum()
    mean, m = dens @ pts, target.weights @ target.means
    print(f"{name}: composed mean ({mean[0]:+.2f}, {mean[1]:+.2f}), "
          f"target mean ({m[0]:+.2f}, {m[1]:+.2f})")
