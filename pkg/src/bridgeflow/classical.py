"""Classical (driftless) Schrödinger bridge on a uniform 1D grid.

The heat-kernel Schrödinger system is solved by the alternating fixed point

    phihat0 <- rho0 / (K phi1),    phi1 <- rho1 / (K^T phihat0)

with the rectangle-rule quadrature weight folded into ``K``.  This is both a
solver in its own right and the reference the point-cloud pipeline is checked
against when the prior potential vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import hilbert_metric

__all__ = [
    "Grid1D",
    "ClassicalSolution",
    "FixedPointError",
    "heat_kernel",
    "heat_kernel_matrix",
    "classical_fixed_point",
    "classical_propagate",
    "classical_control",
    "classical_control_at",
]


class FixedPointError(RuntimeError):
    def __init__(self, iterations, history):
        self.iterations = iterations
        self.history = list(history)
        last = self.history[-1] if self.history else float("nan")
        super().__init__(f"fixed point not converged after {iterations} iterations (residual {last:.3e})")


@dataclass(frozen=True)
class Grid1D:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1)
        if pts.size < 2:
            raise ValueError("a grid needs at least two points")
        d = np.diff(pts)
        if np.any(d <= 0):
            raise ValueError("grid points must be strictly increasing")
        if np.max(np.abs(d - d[0])) > 1e-12 * max(1.0, abs(d[0])) + 1e-12:
            raise ValueError("grid spacing must be uniform")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, lo, hi, size):
        return cls(np.linspace(lo, hi, size))

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0])

    @property
    def size(self) -> int:
        return self.points.size


def heat_kernel(t, x, s, y, epsilon):
    """Transition density of ``dx = sqrt(2 eps) dw`` from ``(s, y)`` to ``(t, x)``, ``t > s``."""
    if not t > s:
        raise ValueError("heat_kernel needs t > s")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = 1 if x.ndim == 0 else x.shape[-1]
    dt = t - s
    d2 = np.sum(np.atleast_1d(x - y) ** 2, axis=-1)
    return (4 * np.pi * epsilon * dt) ** (-n / 2) * np.exp(-d2 / (4 * epsilon * dt))


def heat_kernel_matrix(grid: Grid1D, epsilon, elapsed):
    """``K_ij = k_elapsed(x_i - x_j) * dx``: quadrature-weighted kernel on the grid."""
    if not elapsed > 0:
        raise ValueError("elapsed time must be positive")
    x = grid.points
    d2 = (x[:, None] - x[None, :]) ** 2
    return (4 * np.pi * epsilon * elapsed) ** -0.5 * np.exp(-d2 / (4 * epsilon * elapsed)) * grid.spacing


@dataclass
class ClassicalSolution:
    phi1: np.ndarray
    phihat0: np.ndarray
    iterations: int
    history: list = field(default_factory=list)


def classical_fixed_point(rho0_vals, rho1_vals, kernel, tol=1e-10, max_iter=500):
    """Solve the discrete Schrödinger system for ``(phi1, phihat0)``.

    Stops when the Hilbert metric between successive ``phi1`` iterates falls
    below ``tol``.  The gauge is fixed so that ``phi1`` sums to the grid size.
    """
    rho0 = np.asarray(rho0_vals, dtype=float)
    rho1 = np.asarray(rho1_vals, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if np.any(rho0 <= 0) or np.any(rho1 <= 0):
        raise ValueError("endpoint densities must be strictly positive on the grid")
    if np.any(kernel <= 0):
        raise ValueError("kernel must be entrywise positive")
    phi1 = np.ones_like(rho1)
    history = []
    for it in range(1, max_iter + 1):
        phihat0 = rho0 / (kernel @ phi1)
        phi1_new = rho1 / (kernel.T @ phihat0)
        history.append(hilbert_metric(phi1_new, phi1))
        phi1 = phi1_new
        if history[-1] < tol:
            break
    else:
        raise FixedPointError(max_iter, history)
    phihat0 = rho0 / (kernel @ phi1)
    scale = phi1.size / phi1.sum()
    return ClassicalSolution(phi1 * scale, phihat0 / scale, it, history)


def classical_propagate(values, grid: Grid1D, epsilon, t, kind="phi"):
    """Transient factor on the grid at time ``t``.

    ``kind="phi"`` propagates ``phi1`` backward: ``phi(x,t) = int K(t,x,1,y) phi1(y) dy``.
    ``kind="phihat"`` propagates ``phihat0`` forward: ``int K(0,y,t,x) phihat0(y) dy``.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    values = np.asarray(values, dtype=float)
    if kind == "phi":
        elapsed = 1.0 - t
    elif kind == "phihat":
        elapsed = t
    else:
        raise ValueError("kind must be 'phi' or 'phihat'")
    if elapsed == 0.0:
        return values.copy()
    return heat_kernel_matrix(grid, epsilon, elapsed) @ values


def classical_control(phi_vals, grid: Grid1D, epsilon):
    """``2 eps d/dx log phi``; central differences inside, one-sided at the ends."""
    phi_vals = np.asarray(phi_vals, dtype=float)
    if grid.size < 3:
        raise ValueError("need at least 3 grid points for finite differences")
    if np.any(phi_vals <= 0):
        raise ValueError("phi must be positive")
    return 2.0 * epsilon * np.gradient(np.log(phi_vals), grid.spacing, edge_order=1)


def classical_control_at(phi1, grid: Grid1D, epsilon, t, x):
    """Feedback ``u(x, t)`` for closed-loop simulation, linearly interpolated in ``x``.

    Near ``t = 1`` the backward kernel becomes narrower than the grid; there
    the terminal factor ``phi1`` is differentiated directly.
    """
    elapsed = 1.0 - t
    phi1 = np.asarray(phi1, dtype=float)
    if np.sqrt(2.0 * epsilon * max(elapsed, 0.0)) < 2.0 * grid.spacing:
        u = classical_control(phi1, grid, epsilon)
    else:
        # log-sum-exp form avoids underflow in the tails
        pts = grid.points
        a = -((pts[:, None] - pts[None, :]) ** 2) / (4 * epsilon * elapsed) + np.log(phi1)[None, :]
        mx = a.max(axis=1)
        logphi = mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))
        u = 2.0 * epsilon * np.gradient(logphi, grid.spacing, edge_order=1)
    return np.interp(np.asarray(x, dtype=float), grid.points, u)
