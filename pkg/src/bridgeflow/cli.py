"""Command line driver: ``bridgeflow {solve,classical,simulate} --config PATH``.

Exit codes: 0 success, 1 solver did not converge, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from scipy import stats

from .bridge import SbpConvergenceError, compute_transient_factors, run_endpoint_fixed_point
from .classical import (
    FixedPointError,
    Grid1D,
    classical_control,
    classical_control_at,
    classical_fixed_point,
    classical_propagate,
    heat_kernel_matrix,
)
from .config import ConfigError, load_config, parse_classical, parse_config
from .core import WeightedCloud, make_rng
from .interp import ControlGrid, compose_density, control_field, tensor_grid
from .metrics import discrete_ot_plan
from .prox import NumericalBreakdownError, ProxConvergenceError
from .sde import ControlFieldError, em_path_controlled

__all__ = ["main", "RunManifest", "simulate_closed_loop", "mixture_marginal_cdf"]

logger = logging.getLogger("bridgeflow")

EXIT_OK, EXIT_NONCONVERGED, EXIT_USAGE = 0, 1, 2


def _fmt(x):
    return repr(float(x))


def _tag(t):
    return f"{t:.3f}"


class RunManifest:
    """Collects what a run did and wrote; serialized as ``manifest.json``."""

    def __init__(self, command, raw_config, cfg_hash, out_dir):
        self.out_dir = Path(out_dir)
        self.data = {
            "command": command,
            "config": raw_config,
            "config_hash": cfg_hash,
            "stages": {},
            "residuals": [],
            "files": {},
        }

    @contextlib.contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.data["stages"][name] = round(time.perf_counter() - t0, 6)

    def add_file(self, path):
        path = Path(path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.data["files"][str(path.relative_to(self.out_dir))] = digest

    @property
    def filename(self):
        # simulate usually shares a directory with the solve run it reads
        return "simulate_manifest.json" if self.data["command"] == "simulate" else "manifest.json"

    def write(self, status):
        self.data["status"] = status
        path = self.out_dir / self.filename
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True, default=float) + "\n")
        return path


def _write_csv(path, header, rows, manifest):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    manifest.add_file(path)


def _coord_names(n):
    return [f"x{i + 1}" for i in range(n)]


def _write_cloud(path, cloud, manifest):
    _write_csv(path, _coord_names(cloud.dim) + ["value"],
               np.column_stack([cloud.states, cloud.values]), manifest)


def _threads_from_env():
    val = os.environ.get("BRIDGEFLOW_THREADS")
    if not val:
        return contextlib.nullcontext()
    try:
        n = int(val)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError("BRIDGEFLOW_THREADS", f"must be a positive integer, got {val!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# ---------------------------------------------------------------- solve


def cmd_solve(args):
    run = parse_config(load_config(args.config), seed=args.seed)
    out = Path(args.out or run.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("solve", run.raw, run.hash, out)
    diag_path = out / "diagnostics.jsonl"
    diag = open(diag_path, "w")

    def on_iter(rec):
        # the first iteration has no predecessor; its residuals are written as null
        row = {k: (v if np.isfinite(v) else None) for k, v in rec.items()}
        diag.write(json.dumps({k: row[k] for k in ("iter", "residual_phihat0", "residual_p0", "wall_ms")}) + "\n")
        diag.flush()
        manifest.data["residuals"].append({k: row[k] for k in ("iter", "residual_phihat0", "residual_p0")})

    try:
        with manifest.stage("endpoint_fixed_point"):
            state = run_endpoint_fixed_point(run.model, run.rho0, run.rho1, run.solver, on_iteration=on_iter)
    except (SbpConvergenceError, ProxConvergenceError, NumericalBreakdownError) as exc:
        diag.close()
        manifest.add_file(diag_path)
        manifest.write("not_converged")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    diag.close()
    manifest.add_file(diag_path)

    with manifest.stage("transient_factors"):
        traj = compute_transient_factors(run.model, state, run.solver)
    mass = [float(c.values.sum()) for c in traj.phihat_seq]
    manifest.data["mass_drift_phihat"] = abs(mass[-1] - mass[0]) / mass[0]
    pmass = [float(c.values.sum()) for c in traj.p_seq]
    manifest.data["mass_drift_p"] = abs(pmass[-1] - pmass[0]) / pmass[0]

    axes, nodes = tensor_grid(run.grid_bounds, run.grid_shape)
    names = _coord_names(run.model.state_dim)
    unames = [f"u{i + 1}" for i in range(run.model.noise_dim)]
    shape = run.solver.rbf_shape
    norms = {}
    with manifest.stage("snapshots"):
        for t in run.snapshot_times:
            phi, phihat = traj.phi_at(t), traj.phihat_at(t)
            tag = _tag(t)
            _write_cloud(out / "snapshots" / f"phi_t{tag}.csv", phi, manifest)
            _write_cloud(out / "snapshots" / f"phihat_t{tag}.csv", phihat, manifest)
            dens = compose_density(phi, phihat, nodes, shape)
            _write_csv(out / "snapshots" / f"density_t{tag}.csv", names + ["value"],
                       np.column_stack([nodes, dens]), manifest)
            ctrl = control_field(phi, run.model, run.solver.epsilon, axes, shape, time=t)
            flat = ctrl.values.reshape(-1, run.model.noise_dim)
            _write_csv(out / "snapshots" / f"control_t{tag}.csv", names + unames + ["valid"],
                       np.column_stack([nodes, flat, ctrl.valid.ravel()]), manifest)
            norms[tag] = ctrl.sup_norm()
    manifest.data["control_sup_norm"] = norms
    manifest.data["outer_iterations"] = state.iteration
    manifest.write("converged")
    if not args.quiet:
        print(f"converged in {state.iteration} outer iterations; outputs in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- classical


def cmd_classical(args):
    cc = parse_classical(load_config(args.config), seed=args.seed)
    out = Path(args.out or cc.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("classical", cc.raw, cc.hash, out)
    grid = Grid1D.uniform(cc.lo, cc.hi, cc.size)
    x = grid.points
    r0, r1 = cc.rho0.pdf(x[:, None]), cc.rho1.pdf(x[:, None])
    try:
        with manifest.stage("fixed_point"):
            sol = classical_fixed_point(r0, r1, heat_kernel_matrix(grid, cc.epsilon, 1.0), cc.tol, cc.max_iter)
    except FixedPointError as exc:
        manifest.data["residuals"] = exc.history
        manifest.write("not_converged")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    manifest.data["residuals"] = sol.history
    manifest.data["iterations"] = sol.iterations
    _write_csv(out / "factors.csv", ["x", "phi1", "phihat0"], np.column_stack([x, sol.phi1, sol.phihat0]), manifest)
    norms = {}
    with manifest.stage("snapshots"):
        for t in cc.snapshot_times:
            phi = classical_propagate(sol.phi1, grid, cc.epsilon, t, "phi")
            phihat = classical_propagate(sol.phihat0, grid, cc.epsilon, t, "phihat")
            u = classical_control_at(sol.phi1, grid, cc.epsilon, t, x) if t < 1 else classical_control(phi, grid, cc.epsilon)
            tag = _tag(t)
            _write_csv(out / "snapshots" / f"density_t{tag}.csv", ["x", "value"], np.column_stack([x, phi * phihat]), manifest)
            _write_csv(out / "snapshots" / f"control_t{tag}.csv", ["x", "u"], np.column_stack([x, u]), manifest)
            norms[tag] = float(np.max(np.abs(u)))
    manifest.data["control_sup_norm"] = norms
    if cc.paths > 0:
        with manifest.stage("closed_loop"):
            rng = make_rng(cc.seed)
            x0 = cc.rho0.sample(cc.paths, rng)
            path = simulate_classical_paths(sol.phi1, grid, cc.epsilon, x0[:, 0], cc.dt, rng)
        steps = path.shape[0]
        t_col = np.arange(steps) * cc.dt
        _write_csv(out / "paths.csv", ["t"] + [f"path{i}" for i in range(cc.paths)],
                   np.column_stack([t_col, path]), manifest)
        ks = stats.kstest(path[-1], mixture_marginal_cdf(cc.rho1, 0)).statistic
        manifest.data["terminal_ks"] = float(ks)
    manifest.write("converged")
    if not args.quiet:
        print(f"classical fixed point converged in {sol.iterations} iterations; outputs in {out}")
    return EXIT_OK


def simulate_classical_paths(phi1, grid, epsilon, x0, dt, rng):
    """Closed-loop Euler-Maruyama paths for ``dx = u dt + sqrt(2 eps) dw`` on [0, 1]."""
    from .drift import GradientDrift, zero_potential

    model = GradientDrift(zero_potential(1), 1)

    def law(x, t):
        return classical_control_at(phi1, grid, epsilon, t, x[:, 0])[:, None]

    return em_path_controlled(np.asarray(x0)[:, None], model, epsilon, law, dt, 1.0, rng)[..., 0]


# ---------------------------------------------------------------- simulate


def mixture_marginal_cdf(gm, axis):
    """CDF of coordinate ``axis`` of a Gaussian mixture."""
    mu = gm.means[:, axis]
    sd = np.sqrt(gm.covariances[:, axis, axis])
    w = gm.weights

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return np.sum(w * stats.norm.cdf((x[..., None] - mu) / sd), axis=-1)

    return cdf


def _load_controls(sol_dir, run):
    snap = Path(sol_dir) / "snapshots"
    axes = tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(run.grid_bounds, run.grid_shape))
    n, m = run.model.state_dim, run.model.noise_dim
    grids = []
    for t in run.snapshot_times:
        path = snap / f"control_t{_tag(t)}.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing solution file {path}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        shape = tuple(run.grid_shape)
        vals = data[:, n:n + m].reshape(shape + (m,))
        valid = data[:, n + m].reshape(shape) > 0.5
        grids.append(ControlGrid(axes, vals, valid, t))
    return grids


def simulate_closed_loop(run, controls, rng_seed, paths, dt, use_control=True):
    """Terminal states of ``paths`` closed-loop trajectories started from ``rho0``.

    The control at time ``t`` is read from the stored snapshot nearest in time.
    The noise stream depends only on ``rng_seed``, so controlled and
    uncontrolled runs share their Brownian increments.
    """
    rng = make_rng(rng_seed)
    x0 = run.rho0.sample(paths, rng)
    times = np.array([c.time for c in controls])

    def law(x, t):
        return controls[int(np.argmin(np.abs(times - t)))](x)

    field = law if use_control else None
    path = em_path_controlled(x0, run.model, run.solver.epsilon, field, dt, 1.0, rng)
    return x0, path[-1]


def _w2sq(a, b):
    return discrete_ot_plan(a, np.ones(len(a)), b, np.ones(len(b))).objective


def cmd_simulate(args):
    run = parse_config(load_config(args.config), seed=args.seed)
    sol_dir = Path(args.solution or args.out or run.directory)
    out = Path(args.out or sol_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("simulate", run.raw, run.hash, out)
    controls = _load_controls(sol_dir, run)
    with manifest.stage("closed_loop"):
        x0, xt = simulate_closed_loop(run, controls, run.sim_seed, run.sim_paths, run.sim_dt)
        _, xu = simulate_closed_loop(run, controls, run.sim_seed, run.sim_paths, run.sim_dt, use_control=False)
    ref = run.rho1.sample(run.sim_reference, make_rng(run.sim_seed + 7919))
    with manifest.stage("metrics"):
        report = {
            "paths": run.sim_paths,
            "terminal_mean": xt.mean(axis=0).tolist(),
            "terminal_cov": np.atleast_2d(np.cov(xt.T)).tolist(),
            "w2sq_controlled": _w2sq(xt, ref),
            "w2sq_uncontrolled": _w2sq(xu, ref),
            "w2sq_initial": _w2sq(x0, ref),
            "ks_controlled": [float(stats.kstest(xt[:, i], mixture_marginal_cdf(run.rho1, i)).statistic)
                              for i in range(xt.shape[1])],
            "ks_uncontrolled": [float(stats.kstest(xu[:, i], mixture_marginal_cdf(run.rho1, i)).statistic)
                                for i in range(xu.shape[1])],
        }
    names = _coord_names(run.model.state_dim)
    _write_csv(out / "terminal_controlled.csv", names, xt, manifest)
    _write_csv(out / "terminal_uncontrolled.csv", names, xu, manifest)
    rpath = out / "simulate_report.json"
    rpath.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest.add_file(rpath)
    manifest.data["simulate"] = report
    manifest.write("ok")
    if not args.quiet:
        print(f"terminal W2^2 to rho1 samples: controlled {report['w2sq_controlled']:.4f}, "
              f"uncontrolled {report['w2sq_uncontrolled']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="bridgeflow", description="Schrödinger bridge solver on weighted point clouds")
    sub = p.add_subparsers(dest="command", metavar="{solve,classical,simulate}")
    sub.required = True
    for name, helptext in (
        ("solve", "solve the bridge for a gradient or mixed prior and write snapshots"),
        ("classical", "solve the driftless 1D bridge on a grid"),
        ("simulate", "closed-loop simulation from a solved run's control snapshots"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
        sp.add_argument("--seed", type=int, help="overrides the configured seed")
        sp.add_argument("--quiet", action="store_true")
        if name == "simulate":
            sp.add_argument("--solution", metavar="DIR", help="directory of a completed solve run")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"solve": cmd_solve, "classical": cmd_classical, "simulate": cmd_simulate}[args.command]
    try:
        with _threads_from_env():
            return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ControlFieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
