import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from bobench import gp, numkit
from bobench.gp import (
    DklConfig,
    GpOptConfig,
    GpPriorConfig,
    IbnnKernelSpec,
    Matern52Hypers,
    MaternKernel,
)
from bobench.mlp import MlpSpec

SQRT5 = math.sqrt(5.0)


def relu_moment_quadrature(kaa, kab, kbb, nodes=160):
    """E[relu(u) relu(v)] under a centered bivariate normal, by Gauss-Hermite."""
    xs, ws = np.polynomial.hermite.hermgauss(nodes)
    z = math.sqrt(2.0) * xs
    w = ws / math.sqrt(math.pi)
    cov = np.array([[kaa, kab], [kab, kbb]])
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(2))
    u = L[0, 0] * z[:, None] + 0.0 * z[None, :]
    v = L[1, 0] * z[:, None] + L[1, 1] * z[None, :]
    vals = np.maximum(u, 0.0) * np.maximum(v, 0.0)
    return float(w @ vals @ w)


class TestMatern52:
    def test_same_point(self):
        h = Matern52Hypers(lengthscale=0.7, outputscale=2.5)
        assert gp.matern52(np.ones(3), np.ones(3), h) == pytest.approx(2.5)

    def test_unit_distance_closed_form(self):
        h = Matern52Hypers(lengthscale=1.0, outputscale=1.0)
        expected = (1.0 + SQRT5 + 5.0 / 3.0) * math.exp(-SQRT5)
        assert gp.matern52(np.zeros(1), np.ones(1), h) == pytest.approx(expected, rel=1e-12)

    def test_monotone_decay(self):
        h = Matern52Hypers(lengthscale=1.0, outputscale=1.0)
        rs = np.linspace(0, 8, 60)
        vals = [gp.matern52(np.zeros(1), np.array([r]), h) for r in rs]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] > 0.0

    def test_ard_lengthscales(self):
        h = Matern52Hypers(lengthscale=np.array([1.0, 10.0]), outputscale=1.0)
        near = gp.matern52(np.zeros(2), np.array([0.0, 1.0]), h)
        far = gp.matern52(np.zeros(2), np.array([1.0, 0.0]), h)
        assert near > far


class TestNngpKernel:
    def test_diagonal_recursion_depth1(self):
        spec = IbnnKernelSpec(depth=1, weight_variance=10.0, bias_variance=1.3)
        x = np.array([0.3, 0.8, 0.1])
        k0 = 1.3 + 10.0 * float(x @ x) / 3.0
        assert gp.nngp_kernel(x, x, spec) == pytest.approx(1.3 + 10.0 * k0 / 2.0, rel=1e-12)

    def test_symmetry(self):
        spec = IbnnKernelSpec()
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert gp.nngp_kernel(a, b, spec) == gp.nngp_kernel(b, a, spec)

    def test_single_layer_matches_quadrature(self):
        spec = IbnnKernelSpec(depth=1, weight_variance=10.0, bias_variance=1.3)
        rng = np.random.default_rng(1)
        for _ in range(5):
            a, b = rng.uniform(0, 1, size=4), rng.uniform(0, 1, size=4)
            k0aa = 1.3 + 10.0 * float(a @ a) / 4.0
            k0bb = 1.3 + 10.0 * float(b @ b) / 4.0
            k0ab = 1.3 + 10.0 * float(a @ b) / 4.0
            expected = 1.3 + 10.0 * relu_moment_quadrature(k0aa, k0ab, k0bb)
            assert gp.nngp_kernel(a, b, spec) == pytest.approx(expected, rel=1e-3)

    def test_rotation_invariance(self):
        spec = IbnnKernelSpec(depth=3)
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=4), rng.normal(size=4)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        base = gp.nngp_kernel(a, b, spec)
        rotated = gp.nngp_kernel(q @ a, q @ b, spec)
        assert rotated == pytest.approx(base, rel=1e-10)

    def test_matrix_diag_consistency(self):
        spec = IbnnKernelSpec(depth=2)
        x = np.random.default_rng(3).uniform(size=(6, 3))
        kern = gp.IbnnKernel(spec)
        np.testing.assert_allclose(np.diag(kern.matrix(x, x)), kern.diag(x), rtol=1e-12)


class TestKernelPsd:
    @pytest.mark.parametrize("source", ["matern", "ibnn"])
    def test_random_sets_factorize(self, source):
        rng = np.random.default_rng(5)
        for _ in range(5):
            x = rng.uniform(size=(30, 3))
            if source == "matern":
                k = gp.matern52_matrix(x, x, 0.3, 2.0)
            else:
                k = gp.nngp_matrix(x, x, IbnnKernelSpec())
            _, jit = numkit.cholesky(k)
            assert jit <= 1e-2 * np.mean(np.diag(k))


def brute_force_conditioning(kernel, x_train, y, noise, x_query):
    k_full = kernel.matrix(np.vstack([x_train, x_query]), np.vstack([x_train, x_query]))
    n = x_train.shape[0]
    kxx = k_full[:n, :n] + noise * np.eye(n)
    kqx = k_full[n:, :n]
    kqq = k_full[n:, n:]
    sol = np.linalg.solve(kxx, kqx.T)
    return kqx @ np.linalg.solve(kxx, y), kqq - kqx @ sol


class TestGpPredict:
    def setup_state(self, noise=1e-8, n=3, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=(n, 2))
        y = rng.normal(size=n)
        kernel = MaternKernel(Matern52Hypers(0.4, 1.5, noise))
        L, alpha, jit = gp._condition(kernel, x, y, noise)
        return gp.GpState(kernel, x, y, noise, L, alpha, {"jitter": jit})

    def test_interpolates_training_point(self):
        st = self.setup_state(noise=1e-10)
        mean, cov = st.predict(st.x[:1])
        assert mean[0] == pytest.approx(st.y[0], abs=1e-5)
        assert cov[0, 0] < 1e-5

    def test_prior_reversion_far_away(self):
        st = self.setup_state(noise=1e-6)
        mean, cov = st.predict(np.array([[50.0, -50.0]]))
        assert abs(mean[0]) < 1e-8
        assert cov[0, 0] == pytest.approx(1.5, rel=1e-8)

    def test_matches_brute_force(self):
        st = self.setup_state(noise=0.05, n=3, seed=1)
        xq = np.random.default_rng(2).uniform(size=(2, 2))
        mean, cov = st.predict(xq)
        bmean, bcov = brute_force_conditioning(st.kernel, st.x, st.y, 0.05, xq)
        np.testing.assert_allclose(mean, bmean, atol=1e-8)
        np.testing.assert_allclose(cov, bcov, atol=1e-8)

    def test_brute_force_random_instances(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            n = int(rng.integers(1, 6))
            q = int(rng.integers(1, 8 - n + 1))
            x = rng.uniform(size=(n, 2))
            y = rng.normal(size=n)
            xq = rng.uniform(size=(q, 2))
            kernel = MaternKernel(Matern52Hypers(0.5, 1.0, 0.1))
            L, alpha, _ = gp._condition(kernel, x, y, 0.1)
            st = gp.GpState(kernel, x, y, 0.1, L, alpha)
            mean, cov = st.predict(xq)
            bmean, bcov = brute_force_conditioning(kernel, x, y, 0.1, xq)
            np.testing.assert_allclose(mean, bmean, atol=1e-8)
            np.testing.assert_allclose(cov, bcov, atol=1e-8)

    def test_marginal_matches_full(self):
        st = self.setup_state(noise=0.01, n=5, seed=4)
        xq = np.random.default_rng(5).uniform(size=(7, 2))
        mean_f, cov_f = st.predict(xq)
        mean_m, var_m = st.predict_marginal(xq)
        np.testing.assert_allclose(mean_m, mean_f, rtol=1e-12)
        np.testing.assert_allclose(var_m, np.diag(cov_f), atol=1e-10)

    def test_translation_invariance(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(size=(5, 2))
        y = rng.normal(size=5)
        kernel = MaternKernel(Matern52Hypers(0.5, 1.0, 0.01))
        L, alpha, _ = gp._condition(kernel, x, y, 0.01)
        st = gp.GpState(kernel, x, y, 0.01, L, alpha)
        shift = np.array([0.3, -0.2])
        L2, alpha2, _ = gp._condition(kernel, x + shift, y, 0.01)
        st2 = gp.GpState(kernel, x + shift, y, 0.01, L2, alpha2)
        xq = rng.uniform(size=(3, 2))
        np.testing.assert_allclose(st.predict(xq)[0], st2.predict(xq + shift)[0], atol=1e-10)


class TestGpMll:
    def make_state(self, y, noise=0.1):
        x = np.array([[0.1, 0.2], [0.7, 0.9]])
        kernel = MaternKernel(Matern52Hypers(0.5, 1.2, noise))
        L, alpha, _ = gp._condition(kernel, x, np.asarray(y, dtype=float), noise)
        return gp.GpState(kernel, x, np.asarray(y, dtype=float), noise, L, alpha)

    def test_zero_targets(self):
        st = self.make_state([0.0, 0.0])
        expected = -np.sum(np.log(np.diag(st.chol))) - math.log(2 * math.pi)
        assert gp.gp_mll(st) == pytest.approx(expected, rel=1e-12)

    def test_matches_bivariate_density(self):
        y = [0.4, -1.1]
        st = self.make_state(y)
        cov = st.kernel.matrix(st.x, st.x) + 0.1 * np.eye(2)
        expected = multivariate_normal(mean=np.zeros(2), cov=cov).logpdf(y)
        assert gp.gp_mll(st) == pytest.approx(expected, rel=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(6, 2))
        y = rng.normal(size=6)
        kernel = MaternKernel(Matern52Hypers(0.4, 1.0, 0.05))
        L, alpha, _ = gp._condition(kernel, x, y, 0.05)
        st = gp.GpState(kernel, x, y, 0.05, L, alpha)
        perm = rng.permutation(6)
        L2, alpha2, _ = gp._condition(kernel, x[perm], y[perm], 0.05)
        st2 = gp.GpState(kernel, x[perm], y[perm], 0.05, L2, alpha2)
        assert gp.gp_mll(st) == pytest.approx(gp.gp_mll(st2), rel=1e-10)


class TestMllGradient:
    @pytest.mark.parametrize("ard", [False, True])
    def test_matches_finite_differences(self, ard):
        rng = np.random.default_rng(7)
        x = rng.uniform(size=(12, 2))
        y = rng.normal(size=12)
        obj = gp.matern_objective(x, y, GpPriorConfig(), ard=ard)
        n_ls = 2 if ard else 1
        for seed in range(3):
            r2 = np.random.default_rng(seed)
            phi = np.concatenate([
                np.log(r2.uniform(0.2, 1.0, size=n_ls)),
                [math.log(r2.uniform(0.5, 2.0)), math.log(r2.uniform(0.05, 0.5))],
            ])
            _, grad = obj(phi)
            fd = numkit.finite_diff_grad(lambda p: obj(p)[0], phi, h=1e-6)
            assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-4


class TestGpFit:
    def test_single_point(self):
        st = gp.gp_fit("matern52", np.array([[0.5]]), np.array([0.3]),
                       rng=np.random.default_rng(0))
        mean, _ = st.predict(np.array([[0.5]]))
        assert abs(mean[0] - 0.3) < abs(0.3) * 0.9 + 1e-6

    def test_lengthscale_recovery(self):
        true_ell = 0.2
        recovered = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.uniform(size=(200, 1))
            k = gp.matern52_matrix(x, x, true_ell, 1.0) + 1e-6 * np.eye(200)
            y = np.linalg.cholesky(k) @ rng.standard_normal(200)
            y = (y - y.mean()) / y.std()
            st = gp.gp_fit("matern52", x, y, rng=rng,
                           opt=GpOptConfig(restarts=2, iterations=150))
            recovered.append(float(np.atleast_1d(st.kernel.hypers.lengthscale)[0]))
        med = float(np.median(recovered))
        assert 0.1 <= med <= 0.4

    def test_ibnn_fixed_hypers(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(10, 3))
        y = rng.normal(size=10)
        st = gp.gp_fit(IbnnKernelSpec(), x, y, likelihood_variance=1e-3)
        assert st.diagnostics["trained"] is False
        assert st.likelihood_variance == 1e-3
        assert np.isfinite(gp.gp_mll(st))


class TestGpSample:
    def make_state(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(4, 1))
        y = rng.normal(size=4)
        kernel = MaternKernel(Matern52Hypers(0.3, 1.0, 0.05))
        L, alpha, _ = gp._condition(kernel, x, y, 0.05)
        return gp.GpState(kernel, x, y, 0.05, L, alpha)

    def test_moments(self):
        st = self.make_state()
        xq = np.array([[0.2], [0.9]])
        mean, cov = st.predict(xq)
        draws = gp.gp_sample(st, xq, 50_000, np.random.default_rng(1))
        np.testing.assert_allclose(draws.mean(axis=0), mean, atol=4e-2)
        np.testing.assert_allclose(np.cov(draws.T), cov, atol=4e-2)

    def test_reproducible(self):
        st = self.make_state()
        xq = np.array([[0.4]])
        a = gp.gp_sample(st, xq, 5, np.random.default_rng(9))
        b = gp.gp_sample(st, xq, 5, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_degenerate_at_training_point(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(3, 1))
        y = rng.normal(size=3)
        kernel = MaternKernel(Matern52Hypers(0.3, 1.0, 1e-12))
        L, alpha, _ = gp._condition(kernel, x, y, 1e-12)
        st = gp.GpState(kernel, x, y, 1e-12, L, alpha)
        draws = gp.gp_sample(st, x[:1], 50, np.random.default_rng(3))
        np.testing.assert_allclose(draws, y[0], atol=1e-3)


class TestDkl:
    def test_joint_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        arch = MlpSpec(1, (3, 2), 1, activation="tanh", prior_variance=1.0)
        fspec = gp.feature_spec_from(arch)
        x = rng.uniform(size=(5, 1))
        y = rng.normal(size=5)
        obj = gp.dkl_objective(fspec, x, y)
        theta = np.concatenate([
            rng.normal(size=fspec.n_params) * 0.5,
            [math.log(0.6), math.log(1.2), math.log(0.1)],
        ])
        _, grad = obj(theta)
        fd = numkit.finite_diff_grad(lambda t: obj(t)[0], theta, h=1e-6)
        assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-3

    def test_feature_spec_shape(self):
        arch = MlpSpec(3, (16, 8), 2)
        fspec = gp.feature_spec_from(arch)
        assert fspec.hidden_widths == (16,)
        assert fspec.output_dim == 8

    def test_beats_plain_gp_within_margin(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(size=(30, 1))
        y = np.sin(3.0 * x[:, 0]) + 0.15 * rng.standard_normal(30)
        y = (y - y.mean()) / y.std()
        plain = gp.gp_fit("matern52", x, y, rng=np.random.default_rng(5))
        dkl = gp.dkl_fit(MlpSpec(1, (16, 8), 1, prior_variance=1.0), x, y,
                         DklConfig(iterations=500), rng=np.random.default_rng(6))
        assert gp.gp_mll(dkl.gp) >= gp.gp_mll(plain) - 1.0

    def test_deterministic_given_seed(self):
        rng_data = np.random.default_rng(7)
        x = rng_data.uniform(size=(8, 1))
        y = rng_data.normal(size=8)
        arch = MlpSpec(1, (4, 3), 1)
        a = gp.dkl_fit(arch, x, y, DklConfig(iterations=50), rng=np.random.default_rng(11))
        b = gp.dkl_fit(arch, x, y, DklConfig(iterations=50), rng=np.random.default_rng(11))
        np.testing.assert_array_equal(a.feature_weights, b.feature_weights)
        assert gp.gp_mll(a.gp) == gp.gp_mll(b.gp)
