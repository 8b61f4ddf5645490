"""Multiquadric interpolation of factor clouds, density composition and feedback recovery."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .core import WeightedCloud

__all__ = [
    "RbfInterpolant",
    "RbfConditionError",
    "ExtrapolationError",
    "ControlGrid",
    "default_shape",
    "rbf_fit",
    "rbf_fit_auto",
    "compose_density",
    "control_field",
    "tensor_grid",
]

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
_MERGE_TOL = 1e-12


class RbfConditionError(np.linalg.LinAlgError):
    pass


class ExtrapolationError(ValueError):
    pass


def _kernel(x, c, shape):
    d2 = np.sum(x * x, 1)[:, None] + np.sum(c * c, 1)[None, :] - 2.0 * x @ c.T
    return np.sqrt(np.maximum(d2, 0.0) + shape * shape)


@dataclass(frozen=True)
class RbfInterpolant:
    """``s(x) = m + sum_j c_j sqrt(|x - x_j|^2 + a^2)``.

    ``m`` is the mean of the fitted data, so constant data is reproduced
    exactly without a polynomial block in the linear system.  With ``log_space`` set, the fit was made to ``log(values)`` and evaluation
    returns ``exp(s(x))``, which keeps interpolated factors positive.
    """

    centers: np.ndarray
    coefficients: np.ndarray
    shape: float
    log_space: bool = False
    offset: float = 0.0

    def raw(self, query):
        q = np.asarray(query, dtype=float).reshape(-1, self.centers.shape[1])
        return _kernel(q, self.centers, self.shape) @ self.coefficients + self.offset

    def __call__(self, query):
        s = self.raw(query)
        return np.exp(s) if self.log_space else s

    def log(self, query):
        """Log of the interpolated function; NaN where a value-space fit is not positive."""
        s = self.raw(query)
        if self.log_space:
            return s
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), np.nan)


def _merge_duplicates(x, f):
    tree = cKDTree(x)
    groups = tree.query_ball_point(x, r=_MERGE_TOL)
    seen = np.zeros(len(x), dtype=bool)
    keep_x, keep_f = [], []
    for i, g in enumerate(groups):
        if seen[i]:
            continue
        seen[g] = True
        keep_x.append(x[i])
        keep_f.append(np.mean(f[g]))
    if len(keep_x) < len(x):
        logger.debug("merged %d duplicate centers", len(x) - len(keep_x))
    return np.array(keep_x), np.array(keep_f)


def default_shape(centers):
    """Median nearest-neighbour distance of the centers (1.0 for a single center)."""
    centers = np.asarray(centers, dtype=float)
    if len(centers) < 2:
        return 1.0
    d, _ = cKDTree(centers).query(centers, k=2)
    s = float(np.median(d[:, 1]))
    return s if s > 0 else 1.0


def rbf_fit(cloud: WeightedCloud, shape=None, log_space=False) -> RbfInterpolant:
    """Fit a plain multiquadric interpolant (no polynomial tail) to a cloud."""
    x, f = _merge_duplicates(cloud.states, np.log(cloud.values) if log_space else cloud.values)
    a = default_shape(x) if shape is None else float(shape)
    if not a > 0:
        raise ValueError("shape must be positive")
    k = _kernel(x, x, a)
    cond = np.linalg.cond(k)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RbfConditionError(
            f"multiquadric system ill-conditioned (cond {cond:.2e}); try a smaller shape parameter"
        )
    offset = float(np.mean(f))
    coef = np.linalg.solve(k, f - offset)
    resid = np.max(np.abs(k @ coef + offset - f)) / max(np.max(np.abs(f)), 1e-300)
    if resid > 1e-8:
        raise RbfConditionError(f"interpolation residual {resid:.2e} above 1e-8; try another shape")
    return RbfInterpolant(x, coef, a, bool(log_space), offset)


def rbf_fit_auto(cloud: WeightedCloud, shape=None, log_space=False, max_halvings=12):
    """:func:`rbf_fit`, halving the default shape until the system is well conditioned.

    An explicit ``shape`` is used as given and may raise.
    """
    if shape is not None:
        return rbf_fit(cloud, shape, log_space)
    a = default_shape(cloud.states)
    for _ in range(max_halvings):
        try:
            return rbf_fit(cloud, a, log_space)
        except RbfConditionError:
            a *= 0.5
    return rbf_fit(cloud, a, log_space)


def _check_hull(centers, query):
    lo, hi = centers.min(axis=0), centers.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    if diam == 0.0:
        diam = 1.0
    gap = np.linalg.norm(np.maximum(lo - query, 0) + np.maximum(query - hi, 0), axis=1)
    if np.any(gap > 3.0 * diam):
        raise ExtrapolationError(
            f"query lies {gap.max():.3g} outside the cloud (limit 3 x diameter {diam:.3g})"
        )


def compose_density(phi_cloud, phihat_cloud, query_points, shape=None, log_space=True):
    """``phi * phihat`` at the query points, each factor interpolated from its own cloud.

    Both clouds must describe the same physical time; pairing indices is the
    caller's job.
    """
    q = np.asarray(query_points, dtype=float).reshape(-1, phi_cloud.dim)
    out = np.ones(len(q))
    for cloud in (phi_cloud, phihat_cloud):
        _check_hull(cloud.states, q)
        out = out * rbf_fit_auto(cloud, shape, log_space)(q)
    return np.maximum(out, 0.0)


def tensor_grid(bounds, shape):
    """Axes and flattened nodes of a uniform tensor grid.

    ``bounds`` is a sequence of ``(lo, hi)`` pairs; ``shape`` the node counts.
    Nodes are ordered with the last axis varying fastest.
    """
    axes = [np.linspace(lo, hi, int(n)) for (lo, hi), n in zip(bounds, shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class ControlGrid:
    """Feedback values on a tensor grid; ``values`` has shape ``grid shape + (m,)``."""

    axes: tuple
    values: np.ndarray
    valid: np.ndarray
    time: float = 0.0

    @property
    def nodes(self):
        return tensor_grid([(a[0], a[-1]) for a in self.axes], [len(a) for a in self.axes])[1]

    def sup_norm(self):
        v = self.values[self.valid]
        return float(np.max(np.linalg.norm(v, axis=-1))) if v.size else float("nan")

    def __call__(self, x):
        """Linear interpolation in space, clamped to the grid box; invalid nodes read as 0."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        xc = np.clip(x, lo, hi)
        vals = np.where(self.valid[..., None], self.values, 0.0)
        interp = RegularGridInterpolator(self.axes, vals, method="linear")
        return interp(xc)


def control_field(phi_cloud, model, epsilon, axes, shape=None, log_space=True, time=0.0):
    """``2 eps B^T grad log phi`` on the tensor grid spanned by ``axes``.

    ``axes`` holds one uniform 1D coordinate vector per state dimension.
    Central differences are used inside, one-sided at the faces.  Nodes where
    the interpolated factor is not positive are marked invalid.
    """
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    if len(axes) != phi_cloud.dim:
        raise ValueError("need one axis per state dimension")
    for a in axes:
        if a.size < 3:
            raise ValueError("each grid axis needs at least 3 nodes")
        d = np.diff(a)
        if np.any(d <= 0) or np.ptp(d) > 1e-9 * d[0]:
            raise ValueError("grid axes must be uniform and increasing")
    _, nodes = tensor_grid([(a[0], a[-1]) for a in axes], [a.size for a in axes])
    _check_hull(phi_cloud.states, nodes)
    logphi = rbf_fit_auto(phi_cloud, shape, log_space).log(nodes).reshape([a.size for a in axes])
    grads = np.gradient(logphi, *axes, edge_order=1)
    if len(axes) == 1:
        grads = [grads]
    grad = np.stack(grads, axis=-1)
    ctrl = 2.0 * epsilon * np.asarray(model.control_selector(grad))
    valid = np.all(np.isfinite(ctrl), axis=-1)
    if not np.all(valid):
        logger.warning("%d grid nodes have nonpositive interpolated phi", int(np.sum(~valid)))
    return ControlGrid(axes, ctrl, valid, float(time))
