"""Exact discrete 2-Wasserstein distance and Hilbert's projective metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import WeightedCloud

__all__ = ["DiscreteOtPlan", "discrete_ot_plan", "discrete_w2", "hilbert_metric", "MAX_LP_POINTS"]

MAX_LP_POINTS = 2000


@dataclass(frozen=True)
class DiscreteOtPlan:
    cost: np.ndarray
    plan: np.ndarray
    objective: float


def _sq_dist(x, y):
    d = np.sum(x * x, 1)[:, None] + np.sum(y * y, 1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def discrete_ot_plan(x, a, y, b) -> DiscreteOtPlan:
    """Solve the transport LP ``min <C, P>`` over couplings of ``a`` and ``b``.

    ``a`` and ``b`` are nonnegative weight vectors; each is normalized to sum
    to one.  The ground cost is the squared Euclidean distance.
    """
    x = np.asarray(x, dtype=float).reshape(len(a), -1)
    y = np.asarray(y, dtype=float).reshape(len(b), -1)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = len(a), len(b)
    if max(n, m) > MAX_LP_POINTS:
        raise ValueError(
            f"cloud of size {max(n, m)} exceeds the exact-LP cap {MAX_LP_POINTS}; subsample first"
        )
    if x.shape[1] != y.shape[1]:
        raise ValueError("clouds live in different dimensions")
    if np.any(a < 0) or np.any(b < 0) or a.sum() <= 0 or b.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive total")
    a = a / a.sum()
    b = b / b.sum()
    cost = _sq_dist(x, y)
    if n == 1 or m == 1:
        plan = np.outer(a, b)
        return DiscreteOtPlan(cost, plan, float(np.sum(cost * plan)))
    # row sums then column sums; drop one redundant equality
    rows = sparse.kron(sparse.identity(n), np.ones((1, m)), format="csr")
    cols = sparse.kron(np.ones((1, n)), sparse.identity(m), format="csr")
    a_eq = sparse.vstack([rows, cols[:-1]]).tocsr()
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(n, m), 0.0)
    return DiscreteOtPlan(cost, plan, float(np.sum(cost * plan)))


def discrete_w2(cloud_a: WeightedCloud, cloud_b: WeightedCloud) -> float:
    """Exact W2 between two clouds whose values are read as (unnormalized) masses."""
    res = discrete_ot_plan(cloud_a.states, cloud_a.values, cloud_b.states, cloud_b.values)
    return float(np.sqrt(max(res.objective, 0.0)))


def hilbert_metric(u, v) -> float:
    """``log(max(u/v) / min(u/v))`` for strictly positive vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("vectors must have equal length")
    if np.any(u <= 0) or np.any(v <= 0):
        raise ValueError("hilbert_metric needs strictly positive entries")
    r = np.log(u) - np.log(v)
    return float(r.max() - r.min())
