"""Euler-Maruyama propagation of point clouds under the prior and closed-loop SDEs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drift import MixedDrift

__all__ = ["EmStepRecord", "ControlFieldError", "em_step_prior", "em_path_controlled"]


class ControlFieldError(RuntimeError):
    """The feedback control could not be evaluated at a visited state."""

    def __init__(self, x, t, cause=None):
        self.x = np.array(x, copy=True)
        self.t = float(t)
        msg = f"control field failed at t={self.t:g}"
        if cause is not None:
            msg += f": {cause}"
        super().__init__(msg)


@dataclass(frozen=True)
class EmStepRecord:
    states_before: np.ndarray
    states_after: np.ndarray
    dt: float
    noise_draws: np.ndarray


def _noise_amplitude(model, epsilon, dt):
    if isinstance(model, MixedDrift):
        return np.sqrt(2.0 * epsilon * model.kappa * dt)
    return np.sqrt(2.0 * epsilon * dt)


def _advance(states, model, dt, amp, z, control=None):
    drift = model.drift(states)
    if isinstance(model, MixedDrift):
        m = model.half_dim
        xi, eta = states[..., :m], states[..., m:]
        # position update uses the old velocity, so it never sees the noise draw
        xi_new = xi + eta * dt
        eta_acc = drift[..., m:]
        if control is not None:
            eta_acc = eta_acc + control
        eta_new = eta + eta_acc * dt + amp * z
        return np.concatenate([xi_new, eta_new], axis=-1)
    if control is not None:
        drift = drift + control
    return states + drift * dt + amp * z


def em_step_prior(states, model, epsilon, dt, rng, return_record=False):
    """One Euler-Maruyama step of the uncontrolled prior SDE.

    Gradient drift: ``x' = x - grad V(x) dt + sqrt(2 eps dt) z``.
    Mixed drift: ``xi' = xi + eta dt``,
    ``eta' = eta + (-grad V(xi) - kappa eta) dt + sqrt(2 eps kappa dt) z``.
    ``epsilon = 0`` is accepted and gives the deterministic Euler step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    states = np.asarray(states, dtype=float)
    if states.shape[-1] != model.state_dim:
        raise ValueError(
            f"state dimension {states.shape[-1]} does not match model ({model.state_dim})"
        )
    z = rng.standard_normal(states.shape[:-1] + (model.noise_dim,))
    out = _advance(states, model, dt, _noise_amplitude(model, epsilon, dt), z)
    if return_record:
        return EmStepRecord(states.copy(), out, float(dt), z)
    return out


def em_path_controlled(x0, model, epsilon, control_field, dt, horizon, rng, t0=0.0):
    """Simulate closed-loop sample paths ``dx = (f + B u) dt + sqrt(2 eps) B dw``.

    Parameters
    ----------
    x0 : array, shape (n,) or (M, n)
        Initial state(s).
    control_field : callable ``(x, t) -> u``
        Feedback law evaluated on a batch ``(M, n)``; returns ``(M, n)`` for
        gradient drift or ``(M, m)`` for mixed drift.  ``None`` means no control.
    dt, horizon : float
        ``dt`` must divide ``horizon``.

    Returns
    -------
    path : array, shape (horizon/dt + 1, ...) matching ``x0``.
    """
    if not dt > 0 or not horizon > 0:
        raise ValueError("dt and horizon must be positive")
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("dt must divide the horizon")
    x = np.asarray(x0, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.state_dim:
        raise ValueError("initial state dimension does not match model")
    amp = _noise_amplitude(model, epsilon, dt)
    path = np.empty((steps + 1,) + x.shape)
    path[0] = x
    for k in range(steps):
        t = t0 + k * dt
        u = None
        if control_field is not None:
            try:
                u = np.asarray(control_field(x, t), dtype=float)
            except Exception as exc:  # noqa: BLE001 - re-raised with context
                raise ControlFieldError(x, t, exc) from exc
            if not np.all(np.isfinite(u)):
                raise ControlFieldError(x, t, "non-finite control")
            u = u.reshape(x.shape[0], model.noise_dim)
        z = rng.standard_normal((x.shape[0], model.noise_dim))
        x = _advance(x, model, dt, amp, z, u)
        path[k + 1] = x
    return path[:, 0] if single else path
