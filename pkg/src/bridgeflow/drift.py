"""Prior drift families: gradient drift and mixed conservative-dissipative (Langevin) drift.

All state arguments accept a single point ``(n,)`` or a batch ``(K, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "PolynomialPotential",
    "GradientDrift",
    "MixedDrift",
    "drift_eval",
    "hamiltonian",
    "stationary_log_density",
    "quadratic_potential",
    "zero_potential",
]


class PolynomialPotential:
    """Multivariate polynomial ``sum_k c_k prod_d x_d^{e_kd}`` with an exact gradient.

    >>> V = PolynomialPotential(2, [(0.5, (2, 0)), (0.5, (0, 2))])
    >>> float(V(np.array([1.0, 2.0])))
    2.5
    """

    def __init__(self, dim, terms):
        self.dim = int(dim)
        coefs, exps = [], []
        for coef, exponents in terms:
            e = np.asarray(exponents, dtype=int).reshape(-1)
            if e.shape != (self.dim,) or np.any(e < 0):
                raise ValueError(f"bad exponent vector {exponents!r} for dim {self.dim}")
            coefs.append(float(coef))
            exps.append(e)
        self.coefficients = np.array(coefs, dtype=float)
        self.exponents = np.array(exps, dtype=int).reshape(-1, self.dim)

    @property
    def terms(self):
        return [(c, tuple(int(v) for v in e)) for c, e in zip(self.coefficients, self.exponents)]

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        if x2.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x2.shape[1]}")
        return x2, single

    def __call__(self, x):
        x2, single = self._as_batch(x)
        if self.coefficients.size == 0:
            out = np.zeros(x2.shape[0])
        else:
            # (K, T, d) powers -> product over d
            mono = np.prod(x2[:, None, :] ** self.exponents[None, :, :], axis=2)
            out = mono @ self.coefficients
        return float(out[0]) if single else out

    def gradient(self, x):
        x2, single = self._as_batch(x)
        grad = np.zeros_like(x2)
        for c, e in zip(self.coefficients, self.exponents):
            for d in range(self.dim):
                if e[d] == 0:
                    continue
                ed = e.copy()
                ed[d] -= 1
                grad[:, d] += c * e[d] * np.prod(x2 ** ed, axis=1)
        return grad[0] if single else grad

    def to_list(self):
        return [[c, list(e)] for c, e in self.terms]

    def __repr__(self):
        return f"PolynomialPotential(dim={self.dim}, terms={self.terms})"


def quadratic_potential(dim) -> PolynomialPotential:
    """``V(x) = |x|^2 / 2``."""
    terms = []
    for d in range(dim):
        e = [0] * dim
        e[d] = 2
        terms.append((0.5, e))
    return PolynomialPotential(dim, terms)


def zero_potential(dim) -> PolynomialPotential:
    return PolynomialPotential(dim, [])


def _gradient_of(potential, gradient):
    if gradient is not None:
        return gradient
    if hasattr(potential, "gradient"):
        return potential.gradient
    raise ValueError("a potential gradient is required for non-polynomial potentials")


@dataclass(frozen=True)
class GradientDrift:
    """Drift ``f(x) = -grad V(x)``; noise and control act on every coordinate."""

    potential: Callable
    dim: int
    potential_gradient: Callable | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "potential_gradient", _gradient_of(self.potential, self.potential_gradient)
        )

    kind = "gradient"

    @property
    def state_dim(self) -> int:
        return self.dim

    @property
    def noise_dim(self) -> int:
        return self.dim

    def drift(self, x):
        return -np.asarray(self.potential_gradient(x))

    def energy(self, x):
        """``V(x)``: the function whose Gibbs weight ``exp(-./eps)`` is stationary."""
        return np.asarray(self.potential(x))

    def prox_potential(self, x):
        """Per-point potential entering the discrete free energy."""
        return np.asarray(self.potential(x))

    def control_selector(self, grad):
        return grad

    def flip(self, states):
        return states


@dataclass(frozen=True)
class MixedDrift:
    """Langevin drift ``(eta, -grad V(xi) - kappa eta)`` on states ``x = (xi, eta)``.

    Noise and control enter through ``B = [0; I]``, i.e. only the velocity block.
    """

    potential: Callable
    half_dim: int
    kappa: float
    potential_gradient: Callable | None = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        object.__setattr__(
            self, "potential_gradient", _gradient_of(self.potential, self.potential_gradient)
        )

    kind = "mixed"

    @property
    def state_dim(self) -> int:
        return 2 * self.half_dim

    @property
    def noise_dim(self) -> int:
        return self.half_dim

    def split(self, x):
        x = np.asarray(x, dtype=float)
        m = self.half_dim
        if x.shape[-1] != 2 * m:
            raise ValueError(f"expected state dimension {2 * m}, got {x.shape[-1]}")
        return x[..., :m], x[..., m:]

    def drift(self, x):
        xi, eta = self.split(x)
        return np.concatenate(
            [eta, -np.asarray(self.potential_gradient(xi)) - self.kappa * eta], axis=-1
        )

    def energy(self, x):
        xi, eta = self.split(x)
        return 0.5 * np.sum(eta * eta, axis=-1) + np.asarray(self.potential(xi))

    def prox_potential(self, x):
        # kinetic part only; the position potential enters through the cost
        _, eta = self.split(x)
        return 0.5 * np.sum(eta * eta, axis=-1)

    def control_selector(self, grad):
        return np.asarray(grad)[..., self.half_dim:]

    def flip(self, states):
        """``(xi, eta) -> (xi, -eta)``; an involution."""
        xi, eta = self.split(states)
        return np.concatenate([xi, -eta], axis=-1)


def _check_dim(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.state_dim:
        raise ValueError(f"state dimension {x.shape[-1]} does not match model ({model.state_dim})")
    return x


def drift_eval(model, x):
    """Prior drift ``f(x)``."""
    return model.drift(_check_dim(model, x))


def hamiltonian(model, x):
    """``H(x) = |eta|^2/2 + V(xi)`` for a mixed drift."""
    if not isinstance(model, MixedDrift):
        raise TypeError("hamiltonian is only defined for MixedDrift")
    return model.energy(_check_dim(model, x))


def stationary_log_density(model, x, epsilon):
    """Unnormalized log of the stationary density: ``-V/eps`` or ``-H/eps``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return -model.energy(_check_dim(model, x)) / epsilon
