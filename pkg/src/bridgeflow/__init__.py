"""Schrödinger bridges with gradient and Langevin priors via Wasserstein proximal point clouds."""

from .bridge import (
    FactorState,
    FactorTrajectory,
    SbpConvergenceError,
    compute_transient_factors,
    factor_to_p,
    p_to_factor,
    run_endpoint_fixed_point,
)
from .classical import (
    Grid1D,
    classical_control,
    classical_fixed_point,
    classical_propagate,
    heat_kernel,
    heat_kernel_matrix,
)
from .core import GaussianMixture, SbpConfig, WeightedCloud, make_rng, mixture_pdf, mixture_sample
from .drift import GradientDrift, MixedDrift, PolynomialPotential, drift_eval, hamiltonian
from .interp import RbfInterpolant, compose_density, control_field, rbf_fit
from .metrics import discrete_w2, hilbert_metric
from .prox import ProxProblem, ProxSolution, cost_matrix_euclidean, cost_matrix_mixed, gibbs_kernel, prox_step
from .sde import em_path_controlled, em_step_prior

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
