"""Outer Schrödinger-factor fixed point on point clouds.

Two proximal flows are alternated.  The ``phihat`` flow pushes ``phihat0``
forward under the prior FPK operator.  The ``p`` flow pushes
``p0 = phi1 * exp(-E/eps)`` forward in reversed time, where ``E`` is ``V``
for gradient drift or ``H`` for mixed drift (whose p-flow lives in
velocity-flipped coordinates).  ``phi`` is recovered from ``p`` at every
step.

Each flow keeps its own Euler-Maruyama support, drawn once and reused by
every outer iteration, so successive iterates of the same quantity share
states.  Whenever a factor has to be read on the other flow's states it is
interpolated (log-space multiquadric).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import GaussianMixture, SbpConfig, WeightedCloud
from .drift import MixedDrift
from .interp import rbf_fit_auto
from .metrics import discrete_ot_plan
from .prox import ProxProblem, cost_matrix_euclidean, cost_matrix_mixed, prox_step
from .sde import em_step_prior

__all__ = [
    "FactorState",
    "FactorTrajectory",
    "FlowSupport",
    "SbpConvergenceError",
    "factor_to_p",
    "p_to_factor",
    "build_supports",
    "run_flow",
    "run_endpoint_fixed_point",
    "compute_transient_factors",
]

logger = logging.getLogger(__name__)

# factor values are kept strictly positive; anything smaller carries no mass
VALUE_FLOOR = 1e-300
_LOG_FLOOR = np.log(VALUE_FLOOR)


def _exp_floor(log_vals):
    return np.exp(np.maximum(log_vals, _LOG_FLOOR))


class SbpConvergenceError(RuntimeError):
    def __init__(self, iterations, history):
        self.iterations = iterations
        self.history = list(history)
        last = self.history[-1] if self.history else {}
        super().__init__(
            f"outer fixed point not converged after {iterations} iterations; last residuals "
            f"phihat0={last.get('residual_phihat0', float('nan')):.3e} "
            f"p0={last.get('residual_p0', float('nan')):.3e}"
        )


def factor_to_p(model, phi1_cloud: WeightedCloud, epsilon) -> WeightedCloud:
    """``p = phi * exp(-E/eps)`` on (velocity-flipped, for mixed drift) states."""
    x = phi1_cloud.states
    vals = _exp_floor(np.log(phi1_cloud.values) - np.asarray(model.energy(x)) / epsilon)
    return WeightedCloud(model.flip(x), vals, phi1_cloud.time)


def p_to_factor(model, p_cloud: WeightedCloud, epsilon) -> WeightedCloud:
    """Exact inverse of :func:`factor_to_p`."""
    x = model.flip(p_cloud.states)
    vals = _exp_floor(np.log(p_cloud.values) + np.asarray(model.energy(x)) / epsilon)
    return WeightedCloud(x, vals, p_cloud.time)


@dataclass(frozen=True)
class FlowSupport:
    """States ``X_0 .. X_K`` visited by one flow, shape ``(K+1, N, n)``."""

    states: np.ndarray
    step: float

    @property
    def num_steps(self):
        return self.states.shape[0] - 1


@dataclass
class FactorState:
    phihat0: WeightedCloud
    phi1: WeightedCloud
    phi0: WeightedCloud
    phihat1: WeightedCloud
    p0: WeightedCloud
    p1: WeightedCloud
    iteration: int
    residual_phihat0: float
    residual_p0: float
    history: list = field(default_factory=list)
    phihat_support: FlowSupport | None = field(default=None, repr=False)
    p_support: FlowSupport | None = field(default=None, repr=False)


@dataclass
class FactorTrajectory:
    phihat_seq: list
    phi_seq: list
    p_seq: list
    config: SbpConfig

    def phihat_at(self, t):
        k = int(round(t / self.config.tau))
        return self.phihat_seq[k]

    def phi_at(self, t):
        k = int(round((1.0 - t) / self.config.sigma))
        return self.phi_seq[k]


def _spawn(seed, n):
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def build_supports(model, rho0: GaussianMixture, config: SbpConfig):
    """Draw the phihat-flow support from ``rho0`` and the p-flow support from its end.

    The p flow starts on the (flipped) terminal states of the phihat flow, which
    is where ``phi1`` is known.
    """
    rng_hat, rng_p, rng_init = _spawn(config.seed, 3)
    k = config.num_steps
    xs = np.empty((k + 1, config.num_samples, model.state_dim))
    xs[0] = rho0.sample(config.num_samples, rng_hat).reshape(config.num_samples, -1)
    for i in range(k):
        xs[i + 1] = em_step_prior(xs[i], model, config.epsilon, config.tau, rng_hat)
    ys = np.empty_like(xs)
    ys[0] = model.flip(xs[-1])
    for i in range(k):
        ys[i + 1] = em_step_prior(ys[i], model, config.epsilon, config.sigma, rng_p)
    return FlowSupport(xs, config.tau), FlowSupport(ys, config.sigma), rng_init


def _step_inputs(model, x_prev, x_next, h):
    """Cost, potential and free-energy step for one proximal step of size ``h``.

    Mixed drift: the cost is built with ``h`` itself but the free energy is
    weighted by ``kappa h``.
    """
    if isinstance(model, MixedDrift):
        cost = cost_matrix_mixed(x_prev, x_next, h, model.potential_gradient)
        return cost, model.prox_potential(x_prev), model.kappa * h
    cost = cost_matrix_euclidean(x_prev, x_next)
    return cost, np.asarray(model.prox_potential(x_prev), dtype=float), h


def run_flow(model, support: FlowSupport, values0, config: SbpConfig, keep=False):
    """Advance ``values0`` through every proximal step of a flow.

    Returns the terminal values, or the full ``(K+1, N)`` sequence with ``keep``.
    """
    vals = np.asarray(values0, dtype=float)
    seq = [vals] if keep else None
    h = support.step
    for k in range(support.num_steps):
        cost, v, step = _step_inputs(model, support.states[k], support.states[k + 1], h)
        sol = prox_step(
            ProxProblem(vals, cost, v, step, config.epsilon, config.gamma),
            tol_pr=config.tol_pr,
            max_iter_pr=config.max_iter_pr,
            log_domain=config.log_domain,
        )
        vals = sol.next_values
        if keep:
            seq.append(vals)
    return np.array(seq) if keep else vals


def _w2_squared(x, a, b):
    return discrete_ot_plan(x, a, x, b).objective


def run_endpoint_fixed_point(model, rho0: GaussianMixture, rho1: GaussianMixture,
                             config: SbpConfig, init_scale=1.0, on_iteration=None) -> FactorState:
    """Iterate the endpoint factors until ``(phihat0, p0)`` stop moving.

    The residual of each quantity is the squared discrete 2-Wasserstein
    distance between successive iterates, read as probability vectors over
    their fixed support; both must fall below ``tol_sb``.
    """
    eps = config.epsilon
    sup_hat, sup_p, rng = build_supports(model, rho0, config)
    x0, xk = sup_hat.states[0], sup_hat.states[-1]
    y0, yk = sup_p.states[0], sup_p.states[-1]
    log_rho0 = rho0.logpdf(x0)
    log_rho1 = rho1.logpdf(xk)
    phihat1 = init_scale * rng.uniform(0.1, 1.1, config.num_samples)
    prev_p0 = prev_hat0 = None
    history = []
    for it in range(1, config.max_iter_sb + 1):
        t_start = time.perf_counter()
        phi1 = WeightedCloud(xk, _exp_floor(log_rho1 - np.log(phihat1)), 1.0)
        p0 = factor_to_p(model, phi1, eps)
        p1 = WeightedCloud(yk, run_flow(model, sup_p, p0.values, config), 1.0)
        # phi0 is known on flip(Y_K); read it on X_0 by interpolating log p1
        log_phi0 = (rbf_fit_auto(p1, config.rbf_shape, log_space=True).raw(model.flip(x0))
                    + np.asarray(model.energy(x0)) / eps)
        phi0 = WeightedCloud(x0, _exp_floor(log_phi0), 0.0)
        phihat0_vals = _exp_floor(log_rho0 - log_phi0)
        phihat1 = run_flow(model, sup_hat, phihat0_vals, config)

        if prev_p0 is None:
            r_hat = r_p = float("inf")
        else:
            r_hat = _w2_squared(x0, prev_hat0, phihat0_vals)
            r_p = _w2_squared(y0, prev_p0, p0.values)
        prev_hat0, prev_p0 = phihat0_vals, p0.values
        rec = {
            "iter": it,
            "residual_phihat0": r_hat,
            "residual_p0": r_p,
            "wall_ms": 1000.0 * (time.perf_counter() - t_start),
        }
        history.append(rec)
        logger.info("outer %d: W2^2 phihat0 %.3e, p0 %.3e", it, r_hat, r_p)
        if on_iteration is not None:
            on_iteration(rec)
        if len(history) >= 3:
            prev = history[-2]
            if r_hat > prev["residual_phihat0"] or r_p > prev["residual_p0"]:
                logger.warning("outer residual increased at iteration %d", it)
        if r_hat < config.tol_sb and r_p < config.tol_sb:
            break
    else:
        raise SbpConvergenceError(config.max_iter_sb, history)

    # report the pair consistent with the final phihat1
    phi1 = WeightedCloud(xk, _exp_floor(log_rho1 - np.log(phihat1)), 1.0)
    return FactorState(
        phihat0=WeightedCloud(x0, phihat0_vals, 0.0),
        phi1=phi1,
        phi0=phi0,
        phihat1=WeightedCloud(xk, phihat1, 1.0),
        p0=factor_to_p(model, phi1, eps),
        p1=p1,
        iteration=it,
        residual_phihat0=r_hat,
        residual_p0=r_p,
        history=history,
        phihat_support=sup_hat,
        p_support=sup_p,
    )


def compute_transient_factors(model, state: FactorState, config: SbpConfig) -> FactorTrajectory:
    """Re-run both flows from the converged endpoint data and keep every step.

    ``phihat_seq[k]`` sits at ``t = k tau``; ``phi_seq[k]`` and ``p_seq[k]``
    come from the k-th p-flow step and sit at ``t = 1 - k sigma``.
    """
    eps = config.epsilon
    sup_hat, sup_p = state.phihat_support, state.p_support
    if sup_hat is None or sup_p is None:
        raise ValueError("factor state carries no flow supports")
    hat = run_flow(model, sup_hat, state.phihat0.values, config, keep=True)
    pv = run_flow(model, sup_p, state.p0.values, config, keep=True)
    phihat_seq = [WeightedCloud(sup_hat.states[k], hat[k], k * config.tau) for k in range(len(hat))]
    p_seq = [WeightedCloud(sup_p.states[k], pv[k], 1.0 - k * config.sigma) for k in range(len(pv))]
    phi_seq = [p_to_factor(model, p, eps) for p in p_seq]
    return FactorTrajectory(phihat_seq, phi_seq, p_seq, config)
