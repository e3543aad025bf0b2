import numpy as np
import pytest

from bobench import surrogates
from bobench.errors import DegenerateBounds, FitFailed, OutOfBounds
from bobench.gp import GpOptConfig, IbnnKernelSpec
from bobench.mlp import MlpSpec
from bobench.posteriors import EnsembleConfig, HmcConfig, SghmcConfig
from bobench.surrogates import Dataset, SurrogateConfig, fit, normalize


def toy_dataset(seed=0, n=12, d=2, m=1):
    rng = np.random.default_rng(seed)
    bounds = np.array([[-1.0, 2.0]] * d)
    x = rng.uniform(bounds[:, 0], bounds[:, 1], size=(n, d))
    y = np.stack([np.sin(3 * x[:, 0]) + 0.1 * k + 0.05 * rng.standard_normal(n)
                  for k in range(m)], axis=1)
    return Dataset(x, y, bounds)


def small_mlp():
    return MlpSpec(1, (8,), 1, activation="tanh", likelihood_variance=0.05,
                   prior_variance=1.0)


def quick_config(kind):
    return SurrogateConfig(
        kind=kind,
        mlp=small_mlp(),
        gp_opt=GpOptConfig(restarts=1, iterations=60),
        hmc=HmcConfig(leapfrog_steps=20, burn_in=80, kept_samples=40, thinning=1),
        sghmc=SghmcConfig(iterations=800, burn_in=300, kept_samples=40),
        ensemble=EnsembleConfig(n_models=3, iterations=150),
    )


class TestNormalize:
    def test_bounds_map_to_unit_box(self):
        ds = toy_dataset()
        xn, _, tf = normalize(ds)
        np.testing.assert_allclose(tf.normalize_x(ds.bounds[:, 0][None, :]), 0.0, atol=1e-12)
        np.testing.assert_allclose(tf.normalize_x(ds.bounds[:, 1][None, :]), 1.0, atol=1e-12)
        assert xn.min() >= 0.0 and xn.max() <= 1.0

    def test_standardization(self):
        ds = toy_dataset(m=2)
        _, ys, _ = normalize(ds)
        np.testing.assert_allclose(ys.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(ys.std(axis=0), 1.0, atol=1e-12)

    def test_constant_objective_guard(self):
        ds = Dataset(np.array([[0.0], [1.0]]), np.array([[2.0], [2.0]]),
                     np.array([[0.0, 1.0]]))
        _, ys, tf = normalize(ds)
        assert tf.y_std[0] == 1.0
        np.testing.assert_array_equal(ys, np.zeros((2, 1)))

    def test_roundtrip(self):
        ds = toy_dataset(seed=3)
        _, _, tf = normalize(ds)
        x = np.array([[0.3, 1.4], [-0.9, 0.0]])
        np.testing.assert_allclose(tf.denormalize_x(tf.normalize_x(x)), x, atol=1e-12)
        y = np.array([[0.5], [-2.0]])
        np.testing.assert_allclose(tf.destandardize_y(tf.standardize_y(y)), y, atol=1e-12)

    def test_degenerate_bounds(self):
        with pytest.raises(DegenerateBounds):
            Dataset(np.zeros((2, 1)), np.zeros((2, 1)), np.array([[1.0, 1.0]]))


class TestFitDispatch:
    @pytest.mark.parametrize("kind", ["gp", "ibnn", "dkl", "lla", "hmc", "sghmc", "ensemble"])
    def test_all_kinds_fit_and_draw(self, kind):
        ds = toy_dataset(seed=1, n=10, d=1)
        fitted = fit(quick_config(kind), ds, np.random.default_rng(5))
        draws = fitted.draws(np.array([[0.0], [0.5]]), 16, np.random.default_rng(6))
        assert draws.shape == (16, 2, 1)
        assert np.all(np.isfinite(draws))

    def test_gp_family_one_model_per_objective(self):
        ds = toy_dataset(seed=2, n=10, d=1, m=2)
        fitted = fit(quick_config("gp"), ds, np.random.default_rng(7))
        assert len(fitted.models) == 2

    def test_bnn_single_network_with_m_heads(self):
        ds = toy_dataset(seed=3, n=10, d=1, m=2)
        fitted = fit(quick_config("hmc"), ds, np.random.default_rng(8))
        assert fitted.posterior.spec.output_dim == 2

    def test_single_objective_any_kind_single_model(self):
        ds = toy_dataset(seed=4, n=8, d=1, m=1)
        fitted = fit(quick_config("ibnn"), ds, np.random.default_rng(9))
        assert len(fitted.models) == 1

    def test_failure_wrapped_with_kind(self):
        ds = toy_dataset(seed=5, n=8, d=1)
        cfg = quick_config("sghmc")
        cfg.sghmc = SghmcConfig(step_size=1e12, iterations=200, burn_in=0, kept_samples=10)
        with pytest.raises(FitFailed, match="sghmc"):
            fit(cfg, ds, np.random.default_rng(10))


class TestDraws:
    def test_reproducible(self):
        ds = toy_dataset(seed=6, n=10, d=1)
        fitted = fit(quick_config("gp"), ds, np.random.default_rng(11))
        xq = np.array([[0.1], [0.9]])
        a = fitted.draws(xq, 8, np.random.default_rng(12))
        b = fitted.draws(xq, 8, np.random.default_rng(12))
        np.testing.assert_array_equal(a, b)

    def test_interpolates_training_point_raw_units(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(0, 10, size=(8, 1))
        y = (100.0 + 5.0 * np.sin(x[:, 0]))[:, None]
        ds = Dataset(x, y, np.array([[0.0, 10.0]]))
        cfg = SurrogateConfig(kind="ibnn", ibnn_likelihood_variance=1e-8)
        fitted = fit(cfg, ds, np.random.default_rng(14))
        draws = fitted.draws(x[:1], 64, np.random.default_rng(15))
        assert abs(draws.mean() - y[0, 0]) < 0.05

    def test_out_of_bounds_rejected(self):
        ds = toy_dataset(seed=7, n=8, d=1)
        fitted = fit(quick_config("ibnn"), ds, np.random.default_rng(16))
        with pytest.raises(OutOfBounds):
            fitted.draws(np.array([[99.0]]), 4, np.random.default_rng(17))

    def test_large_query_without_refit(self):
        ds = toy_dataset(seed=8, n=10, d=1)
        fitted = fit(quick_config("gp"), ds, np.random.default_rng(18))
        xq = np.linspace(-1, 2, 1000)[:, None]
        draws = fitted.draws(xq, 2, np.random.default_rng(19))
        assert draws.shape == (2, 1000, 1)

    def test_affine_response_equivariance(self):
        ds = toy_dataset(seed=9, n=10, d=1)
        a, b = 3.5, -20.0
        ds2 = Dataset(ds.x, a * ds.y + b, ds.bounds)
        cfg = quick_config("gp")
        f1 = fit(cfg, ds, np.random.default_rng(20))
        f2 = fit(cfg, ds2, np.random.default_rng(20))
        xq = np.array([[0.2], [1.5]])
        d1 = f1.draws(xq, 32, np.random.default_rng(21))
        d2 = f2.draws(xq, 32, np.random.default_rng(21))
        np.testing.assert_allclose(d2, a * d1 + b, rtol=1e-8, atol=1e-8)


class TestFixedSampler:
    @pytest.mark.parametrize("kind", ["gp", "ibnn", "hmc", "ensemble", "lla"])
    def test_deterministic_given_construction(self, kind):
        ds = toy_dataset(seed=10, n=10, d=1)
        fitted = fit(quick_config(kind), ds, np.random.default_rng(22))
        sampler = fitted.fixed_sampler(16, 3, np.random.default_rng(23))
        sel = np.array([[0.3], [1.0]])
        pool = np.array([[0.0], [0.5], [1.8]])
        a_sel, a_cand = sampler.sel_and_candidate_draws(sel, pool)
        b_sel, b_cand = sampler.sel_and_candidate_draws(sel, pool)
        np.testing.assert_array_equal(a_sel, b_sel)
        np.testing.assert_array_equal(a_cand, b_cand)

    @pytest.mark.parametrize("kind", ["gp", "hmc"])
    def test_selected_draws_independent_of_pool(self, kind):
        ds = toy_dataset(seed=11, n=10, d=1)
        fitted = fit(quick_config(kind), ds, np.random.default_rng(24))
        sampler = fitted.fixed_sampler(16, 3, np.random.default_rng(25))
        sel = np.array([[0.2], [0.8]])
        a_sel, _ = sampler.sel_and_candidate_draws(sel, np.array([[0.0], [1.0]]))
        b_sel, _ = sampler.sel_and_candidate_draws(sel, np.array([[1.5]]))
        np.testing.assert_allclose(a_sel, b_sel, rtol=1e-10)

    def test_gp_candidate_moments_match_posterior(self):
        ds = toy_dataset(seed=12, n=14, d=1)
        cfg = quick_config("gp")
        fitted = fit(cfg, ds, np.random.default_rng(26))
        sampler = fitted.fixed_sampler(4096, 2, np.random.default_rng(27))
        pool = np.array([[0.25], [1.6]])
        _, cand = sampler.sel_and_candidate_draws(np.empty((0, 1)), pool)
        xn = fitted.transforms.normalize_x(pool)
        mean_n, var_n = fitted.models[0].predict_marginal(xn)
        mean_raw = mean_n * fitted.transforms.y_std[0] + fitted.transforms.y_mean[0]
        sd_raw = np.sqrt(var_n) * fitted.transforms.y_std[0]
        np.testing.assert_allclose(cand[:, :, 0].mean(axis=0), mean_raw,
                                   atol=float(4 * sd_raw.max() / 60))
        np.testing.assert_allclose(cand[:, :, 0].std(axis=0), sd_raw, rtol=0.1)

    def test_gp_joint_pairing_is_valid_sample(self):
        # Empirical covariance between a selected point and one candidate must
        # match the posterior cross-covariance at those two points.
        ds = toy_dataset(seed=13, n=14, d=1)
        fitted = fit(quick_config("gp"), ds, np.random.default_rng(28))
        sampler = fitted.fixed_sampler(8192, 2, np.random.default_rng(29))
        sel = np.array([[0.4]])
        pool = np.array([[0.6]])
        d_sel, d_cand = sampler.sel_and_candidate_draws(sel, pool)
        pair = np.stack([d_sel[:, 0, 0], d_cand[:, 0, 0]], axis=1)
        xn = fitted.transforms.normalize_x(np.vstack([sel, pool]))
        _, cov_n = fitted.models[0].predict(xn)
        cov_raw = cov_n * fitted.transforms.y_std[0] ** 2
        np.testing.assert_allclose(np.cov(pair.T), cov_raw, atol=0.05 * max(cov_raw.max(), 0.01))
