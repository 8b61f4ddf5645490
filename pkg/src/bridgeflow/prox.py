"""Entropic Wasserstein proximal step on weighted point clouds.

One step solves

    min_{phi > 0} min_{M in Pi(a, phi)}  1/2 <C, M> + gamma <M, log M> + h <v + eps log phi, phi>

by a Sinkhorn-type dual fixed point.  Stationarity in ``M`` gives
``M = diag(u) G diag(w)`` with ``G = exp(-C / (2 gamma))``; stationarity in
``phi`` gives ``phi = xi * w**(-gamma / (h eps))`` with
``xi = exp(-v/eps - 1 - gamma / (2 h eps))``.  Eliminating ``phi`` through the
column constraint ``phi = w * (G^T u)`` yields the iteration

    u <- a / (G w)
    w <- (xi / (G^T u)) ** (1 / (1 + gamma / (h eps)))
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ProxProblem",
    "ProxSolution",
    "ProxConvergenceError",
    "NumericalBreakdownError",
    "cost_matrix_euclidean",
    "cost_matrix_mixed",
    "gibbs_kernel",
    "log_gibbs_kernel",
    "prox_step",
    "prox_objective",
]

logger = logging.getLogger(__name__)

_TINY = 1e-300


class ProxConvergenceError(RuntimeError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"proximal fixed point did not converge in {iterations} iterations "
            f"(last residual {residual:.3e})"
        )


class NumericalBreakdownError(FloatingPointError):
    def __init__(self, where=""):
        super().__init__(f"numerical breakdown (consider larger gamma){': ' + where if where else ''}")


@dataclass(frozen=True)
class ProxProblem:
    prev_values: np.ndarray
    cost: np.ndarray
    potential: np.ndarray
    step: float
    epsilon: float
    gamma: float

    def __post_init__(self):
        a = np.asarray(self.prev_values, dtype=float).reshape(-1)
        c = np.asarray(self.cost, dtype=float)
        v = np.asarray(self.potential, dtype=float).reshape(-1)
        n = a.shape[0]
        if c.shape != (n, n) or v.shape != (n,):
            raise ValueError(f"shape mismatch: a {a.shape}, cost {c.shape}, potential {v.shape}")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("cost entries must be finite and nonnegative")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("prev_values must be finite and positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential must be finite")
        for name in ("step", "epsilon", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if np.any(a < _TINY):
            logger.warning("clamping %d prev_values below %g", int(np.sum(a < _TINY)), _TINY)
            a = np.maximum(a, _TINY)
        object.__setattr__(self, "prev_values", a)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "potential", v)


@dataclass(frozen=True)
class ProxSolution:
    next_values: np.ndarray
    coupling: np.ndarray
    dual_u: np.ndarray
    dual_w: np.ndarray
    iterations: int
    marginal_residual: float
    hilbert_history: list = field(default_factory=list, repr=False)


def _sq_dist(x, y):
    d = np.sum(x * x, 1)[:, None] + np.sum(y * y, 1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def cost_matrix_euclidean(x_prev, x_next):
    """``C_ij = |x_prev_i - x_next_j|^2``."""
    x_prev = np.asarray(x_prev, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    if x_prev.ndim == 1:
        x_prev = x_prev[:, None]
    if x_next.ndim == 1:
        x_next = x_next[:, None]
    if x_prev.shape != x_next.shape:
        raise ValueError(f"point sets differ in shape: {x_prev.shape} vs {x_next.shape}")
    return _sq_dist(x_prev, x_next)


def cost_matrix_mixed(x_prev, x_next, h, grad_v):
    """Kinetic transport cost ``s_h(x_i, xbar_j)`` for states split as ``(xi, eta)``.

    ``s_h = |etabar - eta + h grad V(xi)|^2 + 12 |(xibar - xi)/h - (etabar + eta)/2|^2``
    with ``(xi, eta)`` read from ``x_prev[i]`` and ``(xibar, etabar)`` from ``x_next[j]``.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    x_prev = np.asarray(x_prev, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    if x_prev.shape != x_next.shape or x_prev.shape[1] % 2:
        raise ValueError("mixed cost needs equal-shape (N, 2m) point sets")
    m = x_prev.shape[1] // 2
    xi, eta = x_prev[:, :m], x_prev[:, m:]
    xib, etab = x_next[:, :m], x_next[:, m:]
    g = np.asarray(grad_v(xi), dtype=float).reshape(xi.shape)
    # first term: |etab_j - (eta_i - h g_i)|^2
    first = _sq_dist(eta - h * g, etab)
    # second term: |(xib_j - h etab_j / 2) / h - (xi_i / h + eta_i / 2)|^2
    second = _sq_dist(xi / h + 0.5 * eta, xib / h - 0.5 * etab)
    return first + 12.0 * second


def log_gibbs_kernel(cost, gamma):
    return -np.asarray(cost, dtype=float) / (2.0 * gamma)


def gibbs_kernel(cost, gamma):
    """``exp(-cost / (2 gamma))``, entries in (0, 1] for nonnegative costs.

    Entries may underflow to zero for costs beyond ~1400 gamma; use the
    log-domain solver in that regime.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return np.exp(log_gibbs_kernel(cost, gamma))


def _lse_rows(a):
    mx = a.max(axis=1)
    return mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))


def _lse_cols(a):
    mx = a.max(axis=0)
    return mx + np.log(np.exp(a - mx[None, :]).sum(axis=0))


def _log_xi(problem):
    h, eps, gam = problem.step, problem.epsilon, problem.gamma
    return -problem.potential / eps - 1.0 - gam / (2.0 * h * eps)


def prox_step(problem: ProxProblem, tol_pr=1e-3, max_iter_pr=500, log_domain=True,
              track_hilbert=False) -> ProxSolution:
    """Run the dual fixed point to convergence and return the next values.

    Convergence is declared when the sup-norm change of ``(log u, log w)``
    between sweeps drops below ``tol_pr``.  Row marginals hold exactly after
    the final ``u`` sweep and ``next_values`` is defined as the column sums of
    the returned coupling, so mass is conserved to rounding.
    """
    a = problem.prev_values
    n = a.shape[0]
    alpha = 1.0 / (1.0 + problem.gamma / (problem.step * problem.epsilon))
    log_xi = _log_xi(problem)
    log_a = np.log(a)
    log_k = log_gibbs_kernel(problem.cost, problem.gamma)
    if not log_domain:
        kern = np.exp(log_k)
        xi = np.exp(log_xi)
    lu = np.zeros(n)
    lw = np.zeros(n)
    history = []
    resid = np.inf
    it = 0
    for it in range(1, max_iter_pr + 1):
        if log_domain:
            lu_new = log_a - _lse_rows(log_k + lw[None, :])
            lw_new = alpha * (log_xi - _lse_cols(log_k + lu_new[:, None]))
        else:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                u = a / (kern @ np.exp(lw))
                w = (xi / (kern.T @ u)) ** alpha
                lu_new, lw_new = np.log(u), np.log(w)
        if not (np.all(np.isfinite(lu_new)) and np.all(np.isfinite(lw_new))):
            raise NumericalBreakdownError(f"iteration {it}")
        if track_hilbert:
            dw = lw_new - lw
            history.append(float(dw.max() - dw.min()))
        resid = max(np.max(np.abs(lu_new - lu)), np.max(np.abs(lw_new - lw)))
        lu, lw = lu_new, lw_new
        if resid < tol_pr:
            break
    else:
        raise ProxConvergenceError(max_iter_pr, float(resid))
    # final u sweep so row marginals are exact
    lu = log_a - _lse_rows(log_k + lw[None, :])
    log_m = lu[:, None] + log_k + lw[None, :]
    coupling = np.exp(log_m)
    phi = coupling.sum(axis=0)
    if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
        # fall back to log-sum for columns that underflow in the plain sum
        phi = np.exp(_lse_cols(log_m))
        if not np.all(np.isfinite(phi)):
            raise NumericalBreakdownError("next values")
    # keep the cloud strictly positive; such entries carry no mass
    phi = np.maximum(phi, _TINY)
    row_res = np.max(np.abs(coupling.sum(axis=1) - a))
    return ProxSolution(
        next_values=phi,
        coupling=coupling,
        dual_u=np.exp(lu),
        dual_w=np.exp(lw),
        iterations=it,
        marginal_residual=float(row_res),
        hilbert_history=history,
    )


def prox_objective(problem: ProxProblem, phi, coupling):
    """Value of the regularized proximal objective at ``(phi, M)``."""
    m = np.asarray(coupling, dtype=float)
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(m > 0, m * np.log(m), 0.0).sum()
    return float(
        0.5 * np.sum(problem.cost * m)
        + problem.gamma * ent
        + problem.step * np.sum((problem.potential + problem.epsilon * np.log(phi)) * phi)
    )
