"""Run configuration: loading, validation and construction of solver objects.

A configuration is a nested mapping (YAML or JSON on disk)::

    drift:     {kind: gradient|mixed, dim: 2, terms: [[coef, [e1, e2]], ...], kappa: 0.5}
    endpoints: {rho0: {weights, means, covariances}, rho1: {...}}
    solver:    {epsilon, gamma, tau, sigma, num_samples, num_steps, tol_sb, max_iter_sb,
                tol_pr, max_iter_pr, seed, log_domain, rbf_shape}
    output:    {snapshot_times: [...], grid: {bounds: [[lo, hi], ...], shape: [...]}, directory}
    simulate:  {paths, dt, reference_samples, seed}
    classical: {epsilon, grid: {lo, hi, size}, rho0, rho1, tol, max_iter,
                snapshot_times, paths, dt, seed}

For mixed drift ``dim`` is the position dimension ``m``; states are ``2m``-dimensional.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .core import GaussianMixture, SbpConfig
from .drift import GradientDrift, MixedDrift, PolynomialPotential

__all__ = [
    "ConfigError",
    "RunConfig",
    "ClassicalConfig",
    "load_config",
    "parse_config",
    "parse_classical",
    "config_hash",
]

_SOLVER_KEYS = {
    "epsilon", "gamma", "tau", "sigma", "num_samples", "num_steps", "tol_sb",
    "max_iter_sb", "tol_pr", "max_iter_pr", "seed", "log_domain", "rbf_shape",
}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"config error at '{key}': {message}")


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML/JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("<root>", "top level must be a mapping")
    return data


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def _section(raw, name, required=True):
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(name, "missing section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a mapping")
    return sec


def _mixture(spec, key):
    if not isinstance(spec, dict):
        raise ConfigError(key, "must be a mapping with weights, means, covariances")
    for k in ("weights", "means", "covariances"):
        if k not in spec:
            raise ConfigError(f"{key}.{k}", "missing")
    try:
        return GaussianMixture.from_dict(spec)
    except (ValueError, TypeError) as exc:
        raise ConfigError(key, str(exc)) from exc


def _positive(sec, name, key, default=None, cast=float):
    val = sec.get(name, default)
    if val is None:
        raise ConfigError(f"{key}.{name}", "missing")
    try:
        val = cast(val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}.{name}", f"not a number: {val!r}") from exc
    if not (np.isfinite(val) and val > 0):
        raise ConfigError(f"{key}.{name}", f"must be positive, got {val!r}")
    return val


def _times(values, key):
    try:
        times = [float(t) for t in values]
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, "must be a list of numbers") from exc
    if not times or any(not 0.0 <= t <= 1.0 for t in times):
        raise ConfigError(key, "times must lie in [0, 1]")
    return sorted(set(times))


def _build_drift(sec):
    kind = sec.get("kind")
    if kind not in ("gradient", "mixed"):
        raise ConfigError("drift.kind", f"must be 'gradient' or 'mixed', got {kind!r}")
    dim = int(_positive(sec, "dim", "drift", cast=int))
    terms = sec.get("terms", [])
    try:
        potential = PolynomialPotential(dim, [(c, e) for c, e in terms])
    except (ValueError, TypeError) as exc:
        raise ConfigError("drift.terms", str(exc)) from exc
    if kind == "gradient":
        return GradientDrift(potential, dim), 1.0
    kappa = _positive(sec, "kappa", "drift")
    return MixedDrift(potential, dim, kappa), kappa


@dataclass
class RunConfig:
    raw: dict
    model: object
    rho0: GaussianMixture
    rho1: GaussianMixture
    solver: SbpConfig
    snapshot_times: list
    grid_bounds: list
    grid_shape: list
    directory: str
    sim_paths: int
    sim_dt: float
    sim_reference: int
    sim_seed: int

    @property
    def hash(self):
        return config_hash(self.raw)


def parse_config(raw: dict, seed=None) -> RunConfig:
    """Validate a solve/simulate configuration and build the solver objects."""
    raw = copy.deepcopy(raw)
    model, kappa = _build_drift(_section(raw, "drift"))
    ends = _section(raw, "endpoints")
    rho0 = _mixture(ends.get("rho0"), "endpoints.rho0")
    rho1 = _mixture(ends.get("rho1"), "endpoints.rho1")
    for name, gm in (("rho0", rho0), ("rho1", rho1)):
        if gm.dim != model.state_dim:
            raise ConfigError(f"endpoints.{name}", f"dimension {gm.dim} != state dimension {model.state_dim}")

    sol = dict(_section(raw, "solver"))
    unknown = set(sol) - _SOLVER_KEYS
    if unknown:
        raise ConfigError(f"solver.{sorted(unknown)[0]}", "unknown key")
    if seed is not None:
        sol["seed"] = int(seed)
        raw["solver"]["seed"] = int(seed)
    if "epsilon" not in sol:
        raise ConfigError("solver.epsilon", "missing")
    try:
        solver = SbpConfig(kappa=kappa, **sol)
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        # attribute the error to the first solver key the message mentions
        hits = [(msg.find(k), -len(k), k) for k in _SOLVER_KEYS if k in msg]
        key = f"solver.{min(hits)[2]}" if hits else "solver"
        raise ConfigError(key, msg) from exc

    out = _section(raw, "output", required=False)
    times = _times(out.get("snapshot_times", [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]), "output.snapshot_times")
    grid = out.get("grid", {})
    bounds = grid.get("bounds", [[-4.0, 4.0]] * model.state_dim)
    shape = grid.get("shape", [101] * model.state_dim)
    if len(bounds) != model.state_dim or len(shape) != model.state_dim:
        raise ConfigError("output.grid", "need one bound pair and one node count per state dimension")
    for i, (b, n) in enumerate(zip(bounds, shape)):
        if len(b) != 2 or not float(b[0]) < float(b[1]):
            raise ConfigError(f"output.grid.bounds[{i}]", "must be [lo, hi] with lo < hi")
        if int(n) < 3:
            raise ConfigError(f"output.grid.shape[{i}]", "need at least 3 nodes")

    sim = _section(raw, "simulate", required=False)
    return RunConfig(
        raw=raw,
        model=model,
        rho0=rho0,
        rho1=rho1,
        solver=solver,
        snapshot_times=times,
        grid_bounds=[[float(b[0]), float(b[1])] for b in bounds],
        grid_shape=[int(n) for n in shape],
        directory=str(out.get("directory", "bridgeflow_out")),
        sim_paths=int(_positive(sim, "paths", "simulate", 500, int)),
        sim_dt=_positive(sim, "dt", "simulate", 1e-3),
        sim_reference=int(_positive(sim, "reference_samples", "simulate", 500, int)),
        sim_seed=int(sim.get("seed", solver.seed + 1)),
    )


@dataclass
class ClassicalConfig:
    raw: dict
    epsilon: float
    lo: float
    hi: float
    size: int
    rho0: GaussianMixture
    rho1: GaussianMixture
    tol: float
    max_iter: int
    snapshot_times: list
    paths: int
    dt: float
    seed: int
    directory: str

    @property
    def hash(self):
        return config_hash(self.raw)


def parse_classical(raw: dict, seed=None) -> ClassicalConfig:
    raw = copy.deepcopy(raw)
    sec = _section(raw, "classical")
    if seed is not None:
        sec["seed"] = int(seed)
    eps = _positive(sec, "epsilon", "classical")
    grid = sec.get("grid", {})
    lo, hi = float(grid.get("lo", -6.0)), float(grid.get("hi", 6.0))
    if not lo < hi:
        raise ConfigError("classical.grid", "need lo < hi")
    size = int(_positive(grid, "size", "classical.grid", 401, int))
    if size < 3:
        raise ConfigError("classical.grid.size", "need at least 3 nodes")
    rho0 = _mixture(sec.get("rho0"), "classical.rho0")
    rho1 = _mixture(sec.get("rho1"), "classical.rho1")
    for name, gm in (("rho0", rho0), ("rho1", rho1)):
        if gm.dim != 1:
            raise ConfigError(f"classical.{name}", "the classical solver is one-dimensional")
    out = _section(raw, "output", required=False)
    return ClassicalConfig(
        raw=raw,
        epsilon=eps,
        lo=lo,
        hi=hi,
        size=size,
        rho0=rho0,
        rho1=rho1,
        tol=_positive(sec, "tol", "classical", 1e-10),
        max_iter=int(_positive(sec, "max_iter", "classical", 500, int)),
        snapshot_times=_times(sec.get("snapshot_times", [0.0, 0.25, 0.5, 0.75, 1.0]),
                              "classical.snapshot_times"),
        paths=int(sec.get("paths", 100)),
        dt=_positive(sec, "dt", "classical", 1e-3),
        seed=int(sec.get("seed", 0)),
        directory=str(out.get("directory", "bridgeflow_out")),
    )
