"""Fast self-contained oracle checks behind the `bobench selftest` subcommand.

Each check recomputes an expected value through an independent route (finite
differences, brute-force conditioning, closed forms, quadrature) and compares
the production path against it.
"""

from __future__ import annotations

import math

import numpy as np

from . import gp as gp_mod
from . import mlp as mlp_mod
from . import numkit
from .acquisition import ParetoState, hypervolume, pareto_front, qei, wfg_hypervolume
from .gp import GpPriorConfig, IbnnKernelSpec, Matern52Hypers, MaternKernel
from .mlp import MlpSpec
from .posteriors import LlaConfig, lla_fit


def _check_cholesky():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((40, 40))
    a = a @ a.T + 40 * np.eye(40)
    L, jit = numkit.cholesky(a)
    err = np.linalg.norm(L @ L.T - (a + jit * np.eye(40))) / np.linalg.norm(a)
    return err < 1e-10, f"reconstruction error {err:.2e}"


def _check_mlp_gradient():
    rng = np.random.default_rng(1)
    spec = MlpSpec(3, (5, 4), 2, activation="tanh", prior_variance=2.0,
                   likelihood_variance=0.3)
    x = rng.normal(size=(6, 3))
    y = rng.normal(size=(6, 2))
    params = mlp_mod.mlp_init(spec, rng) * 0.5
    _, grad = mlp_mod.log_joint_and_grad(spec, params, x, y)
    fd = numkit.finite_diff_grad(lambda p: mlp_mod.log_joint_and_grad(spec, p, x, y)[0],
                                 params, h=1e-5)
    rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
    return rel < 1e-4, f"relative error {rel:.2e}"


def _check_mll_gradient():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(10, 2))
    y = rng.normal(size=10)
    obj = gp_mod.matern_objective(x, y, GpPriorConfig())
    phi = np.array([math.log(0.4), math.log(1.1), math.log(0.2)])
    _, grad = obj(phi)
    fd = numkit.finite_diff_grad(lambda p: obj(p)[0], phi, h=1e-6)
    rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
    return rel < 1e-4, f"relative error {rel:.2e}"


def _check_dkl_gradient():
    rng = np.random.default_rng(3)
    fspec = gp_mod.feature_spec_from(MlpSpec(1, (3, 2), 1))
    x = rng.uniform(size=(5, 1))
    y = rng.normal(size=5)
    obj = gp_mod.dkl_objective(fspec, x, y)
    theta = np.concatenate([rng.normal(size=fspec.n_params) * 0.5,
                            [math.log(0.6), math.log(1.2), math.log(0.1)]])
    _, grad = obj(theta)
    fd = numkit.finite_diff_grad(lambda t: obj(t)[0], theta, h=1e-6)
    rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
    return rel < 1e-3, f"relative error {rel:.2e}"


def _check_gp_conditioning():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(4, 2))
    y = rng.normal(size=4)
    xq = rng.uniform(size=(2, 2))
    kernel = MaternKernel(Matern52Hypers(0.5, 1.0, 0.1))
    L, alpha, _ = gp_mod._condition(kernel, x, y, 0.1)
    st = gp_mod.GpState(kernel, x, y, 0.1, L, alpha)
    mean, cov = st.predict(xq)
    k_full = kernel.matrix(np.vstack([x, xq]), np.vstack([x, xq]))
    kxx = k_full[:4, :4] + 0.1 * np.eye(4)
    kqx = k_full[4:, :4]
    bmean = kqx @ np.linalg.solve(kxx, y)
    bcov = k_full[4:, 4:] - kqx @ np.linalg.solve(kxx, kqx.T)
    err = max(np.max(np.abs(mean - bmean)), np.max(np.abs(cov - bcov)))
    return err < 1e-8, f"max deviation {err:.2e}"


def _check_nngp_quadrature():
    spec = IbnnKernelSpec(depth=1, weight_variance=10.0, bias_variance=1.3)
    rng = np.random.default_rng(5)
    a, b = rng.uniform(size=3), rng.uniform(size=3)
    k0aa = 1.3 + 10 * float(a @ a) / 3
    k0bb = 1.3 + 10 * float(b @ b) / 3
    k0ab = 1.3 + 10 * float(a @ b) / 3
    xs, ws = np.polynomial.hermite.hermgauss(120)
    z = math.sqrt(2.0) * xs
    w = ws / math.sqrt(math.pi)
    Lc = np.linalg.cholesky(np.array([[k0aa, k0ab], [k0ab, k0bb]]))
    u = Lc[0, 0] * z[:, None] + 0 * z[None, :]
    v = Lc[1, 0] * z[:, None] + Lc[1, 1] * z[None, :]
    moment = float(w @ (np.maximum(u, 0) * np.maximum(v, 0)) @ w)
    want = 1.3 + 10.0 * moment
    got = gp_mod.nngp_kernel(a, b, spec)
    rel = abs(got - want) / abs(want)
    return rel < 1e-3, f"relative error {rel:.2e}"


def _check_qei_analytic():
    from scipy.stats import norm

    mu, sd, inc = 0.4, 0.8, 0.1
    z = numkit.sobol_normal(1, 8192, seed=7)[:, 0]
    draws = (mu + sd * z)[:, None]
    got = qei(draws, inc)
    zz = (mu - inc) / sd
    want = sd * (zz * norm.cdf(zz) + norm.pdf(zz))
    rel = abs(got - want) / want
    return rel < 0.02, f"relative error {rel:.2e}"


def _check_hypervolume():
    rng = np.random.default_rng(6)
    y = rng.uniform(0.1, 1.0, size=(12, 2))
    state = pareto_front(y, np.zeros(2))
    fast = hypervolume(state)
    slow = wfg_hypervolume(state.front, np.zeros(2))
    ok = abs(fast - slow) < 1e-12
    unit = hypervolume(ParetoState(np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros(2)))
    ok = ok and abs(unit - 3.0) < 1e-12
    return ok, f"2d fast path vs WFG diff {abs(fast - slow):.2e}; union box {unit}"


def _check_sobol():
    first = numkit.sobol_points(1, 1, seed=0)[0, 0]
    rep = np.array_equal(numkit.sobol_points(3, 17, seed=4), numkit.sobol_points(3, 17, seed=4))
    return first == 0.5 and rep, f"first point {first}, reproducible {rep}"


def _check_lla_exactness():
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, size=(15, 2))
    w_true = rng.normal(size=2)
    y = (x @ w_true + 0.2 + 0.2 * rng.standard_normal(15))[:, None]
    spec = MlpSpec(2, (), 1, likelihood_variance=0.09, prior_variance=1.5)
    state = lla_fit(spec, x, y, LlaConfig(iterations=500), np.random.default_rng(9))
    phi = np.hstack([x, np.ones((15, 1))])
    lam = phi.T @ phi / 0.09 + np.eye(3) / 1.5
    cov_t = np.linalg.inv(lam)
    mean_t = cov_t @ phi.T @ y[:, 0] / 0.09
    xq = rng.uniform(-1, 1, size=(4, 2))
    phi_q = np.hstack([xq, np.ones((4, 1))])
    got_mean, got_cov = state.heads[0].predict(xq)
    err = max(
        np.max(np.abs(got_mean - phi_q @ mean_t)),
        np.max(np.abs(got_cov - phi_q @ cov_t @ phi_q.T)),
    )
    return err < 1e-6, f"max deviation {err:.2e}"


CHECKS = [
    ("cholesky reconstruction", _check_cholesky),
    ("mlp log-joint gradient vs finite differences", _check_mlp_gradient),
    ("matern mll gradient vs finite differences", _check_mll_gradient),
    ("deep-kernel joint gradient vs finite differences", _check_dkl_gradient),
    ("gp predict vs brute-force conditioning", _check_gp_conditioning),
    ("infinite-width kernel vs quadrature", _check_nngp_quadrature),
    ("mc expected improvement vs closed form", _check_qei_analytic),
    ("hypervolume fast path vs recursion", _check_hypervolume),
    ("sobol determinism and first point", _check_sobol),
    ("laplace exactness on a linear model", _check_lla_exactness),
]


def run_selftest() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - a crash is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
