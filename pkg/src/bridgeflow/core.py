"""Shared value types: weighted point clouds, Gaussian mixtures, solver parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "WeightedCloud",
    "GaussianMixture",
    "SbpConfig",
    "mixture_pdf",
    "mixture_logpdf",
    "mixture_sample",
    "make_rng",
]


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WeightedCloud:
    """N scattered states with strictly positive function samples attached.

    ``values`` are samples of a function (a PDF or a Schrödinger factor) at
    ``states``, not particle masses.
    """

    states: np.ndarray
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("states must be an (N, n) array with N >= 1")
        if values.shape[0] != states.shape[0]:
            raise ValueError(
                f"got {values.shape[0]} values for {states.shape[0]} states"
            )
        if not np.all(np.isfinite(states)):
            raise ValueError("states must be finite")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("values must be finite and strictly positive")
        if not np.isfinite(self.time):
            raise ValueError("time must be finite")
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "time", float(self.time))

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def with_values(self, values, time=None) -> "WeightedCloud":
        return WeightedCloud(self.states, values, self.time if time is None else time)

    def normalized(self) -> np.ndarray:
        """Values rescaled to a probability vector."""
        return self.values / self.values.sum()


@dataclass(frozen=True)
class GaussianMixture:
    """Finite mixture of multivariate normals, ``sum_i c_i N(mu_i, Sigma_i)``."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None] if weights.size > 1 else means[None, :]
        covs = np.asarray(self.covariances, dtype=float)
        k, n = means.shape
        if covs.ndim == 2 and k == 1:
            covs = covs[None]
        if covs.ndim == 1 and n == 1:
            covs = covs.reshape(k, 1, 1)
        if weights.shape != (k,) or covs.shape != (k, n, n):
            raise ValueError(
                f"inconsistent mixture shapes: weights {weights.shape}, "
                f"means {means.shape}, covariances {covs.shape}"
            )
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if not np.allclose(covs, np.swapaxes(covs, 1, 2)):
            raise ValueError("covariances must be symmetric")
        chol = np.empty_like(covs)
        for i, cov in enumerate(covs):
            if np.min(np.linalg.eigvalsh(cov)) <= 0:
                raise ValueError(f"degenerate mixture component {i}: covariance not SPD")
            chol[i] = np.linalg.cholesky(cov)
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "covariances", _frozen(covs))
        object.__setattr__(self, "_chol", _frozen(chol))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def pdf(self, x):
        return mixture_pdf(self, x)

    def logpdf(self, x):
        return mixture_logpdf(self, x)

    def sample(self, count, rng):
        return mixture_sample(self, count, rng)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "GaussianMixture":
        return cls(d["weights"], d["means"], d["covariances"])


def mixture_pdf(gm: GaussianMixture, x):
    """Evaluate the mixture density at one point ``(n,)`` or a batch ``(K, n)``."""
    out = mixture_logpdf(gm, x)
    return float(np.exp(out)) if np.ndim(out) == 0 else np.exp(out)


def mixture_logpdf(gm: GaussianMixture, x):
    """Log-density, computed without underflow far from the components."""
    x = np.asarray(x, dtype=float)
    if gm.dim == 1:
        single = x.ndim == 0
        pts = x.reshape(-1, 1)
    else:
        single = x.ndim == 1
        pts = np.atleast_2d(x)
    if pts.shape[1] != gm.dim:
        raise ValueError(f"expected points of dimension {gm.dim}, got {pts.shape[1]}")
    n = gm.dim
    terms = np.empty((gm.n_components, pts.shape[0]))
    for i, (c, mu, L) in enumerate(zip(gm.weights, gm.means, gm._chol)):
        z = np.linalg.solve(L, (pts - mu).T)
        log_norm = -0.5 * n * np.log(2 * np.pi) - np.sum(np.log(np.diag(L)))
        terms[i] = np.log(c) + log_norm - 0.5 * np.sum(z * z, axis=0)
    total = logsumexp(terms, axis=0)
    return float(total[0]) if single else total


def mixture_sample(gm: GaussianMixture, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` i.i.d. samples; deterministic for a given generator state."""
    if count < 1:
        raise ValueError("count must be >= 1")
    labels = rng.choice(gm.n_components, size=count, p=gm.weights)
    z = rng.standard_normal((count, gm.dim))
    out = np.empty((count, gm.dim))
    for i in range(gm.n_components):
        sel = labels == i
        out[sel] = gm.means[i] + z[sel] @ gm._chol[i].T
    return out


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator; pass a ``SeedSequence`` to get a split stream."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SbpConfig:
    epsilon: float
    gamma: float = 0.5
    tau: float = 1e-3
    sigma: float = 1e-3
    kappa: float = 1.0
    num_samples: int = 200
    num_steps: int = 1000
    tol_sb: float = 0.1
    tol_pr: float = 1e-3
    max_iter_sb: int = 500
    max_iter_pr: int = 500
    seed: int = 0
    log_domain: bool = True
    rbf_shape: float | None = None

    def __post_init__(self):
        for name in ("epsilon", "gamma", "tau", "sigma", "kappa", "tol_sb", "tol_pr"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a positive real, got {val!r}")
        for name in ("num_samples", "num_steps", "max_iter_sb", "max_iter_pr"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ValueError(f"{name} must be a positive integer, got {val!r}")
        if abs(self.tau * self.num_steps - 1.0) > 1e-9:
            raise ValueError("tau * num_steps must equal 1 (unit horizon)")
        if abs(self.sigma * self.num_steps - 1.0) > 1e-9:
            raise ValueError("sigma * num_steps must equal 1 (unit horizon)")
        if self.rbf_shape is not None and not self.rbf_shape > 0:
            raise ValueError("rbf_shape must be positive")
