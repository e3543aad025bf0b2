import math

import numpy as np
import pytest
from scipy.optimize import minimize

from bobench import problems
from bobench.errors import BadDimension, OutOfBounds
from bobench.problems import make_problem


class TestBranin:
    def test_known_best_by_grid_and_refinement(self):
        p = make_problem("branin")
        g1 = np.linspace(-5, 10, 300)
        g2 = np.linspace(0, 15, 300)
        xx, yy = np.meshgrid(g1, g2)
        grid = np.stack([xx.ravel(), yy.ravel()], axis=1)
        vals = p.evaluate(grid)[:, 0]
        start = grid[np.argmax(vals)]
        res = minimize(lambda x: -p.evaluate(x[None, :])[0, 0], start,
                       bounds=[(-5, 10), (0, 15)])
        assert -res.fun == pytest.approx(-0.397887, abs=1e-4)
        optima = np.array([[math.pi, 2.275], [-math.pi, 12.275], [9.42478, 2.475]])
        assert np.min(np.linalg.norm(optima - res.x, axis=1)) < 1e-2

    def test_random_search_never_beats_known_best(self):
        p = make_problem("branin")
        rng = np.random.default_rng(0)
        x = rng.uniform(p.bounds[:, 0], p.bounds[:, 1], size=(1_000_000, 2))
        assert p.evaluate(x).max() <= p.known_best + 1e-6

    def test_out_of_bounds(self):
        p = make_problem("branin")
        with pytest.raises(OutOfBounds):
            p.evaluate(np.array([[100.0, 0.0]]))


class TestHartmann6:
    def test_known_best_multistart(self):
        p = make_problem("hartmann6")
        rng = np.random.default_rng(1)
        best = -np.inf
        for _ in range(20):
            res = minimize(lambda x: -p.evaluate(np.clip(x, 0, 1)[None, :])[0, 0],
                           rng.uniform(size=6), bounds=[(0, 1)] * 6)
            best = max(best, -res.fun)
        assert best == pytest.approx(3.32237, abs=1e-4)

    def test_random_search_never_beats_known_best(self):
        p = make_problem("hartmann6")
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(1_000_000, 6))
        assert p.evaluate(x).max() <= p.known_best + 1e-6


class TestAckley:
    def test_origin_is_global_max(self):
        p = make_problem("ackley", dim=10)
        assert p.evaluate(np.zeros((1, 10)))[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_random_search_never_beats_origin(self):
        p = make_problem("ackley", dim=10)
        rng = np.random.default_rng(3)
        x = rng.uniform(-32.768, 32.768, size=(1_000_000, 10))
        assert p.evaluate(x).max() <= 1e-6

    def test_small_box_preset(self):
        p = make_problem("ackley", dim=5, box="small")
        np.testing.assert_array_equal(p.bounds, np.array([[-5.0, 10.0]] * 5))


class TestDtlz:
    def test_dtlz1_front_structure(self):
        p = make_problem("dtlz1", dim=5, num_objectives=2)
        rng = np.random.default_rng(4)
        for _ in range(10):
            x = np.concatenate([rng.uniform(size=1), np.full(4, 0.5)])
            out = p.evaluate(x[None, :])[0]
            assert np.sum(-out) == pytest.approx(0.5, abs=1e-9)

    def test_dtlz5_shapes_and_ref(self):
        p = make_problem("dtlz5", dim=6, num_objectives=2)
        rng = np.random.default_rng(5)
        out = p.evaluate(rng.uniform(size=(30, 6)))
        assert out.shape == (30, 2)
        assert p.ref_point is not None and p.ref_point.shape == (2,)

    @pytest.mark.parametrize("name", ["dtlz1", "dtlz5", "branincurrin"])
    def test_ref_point_dominated_by_attainable(self, name):
        p = make_problem(name)
        rng = np.random.default_rng(6)
        x = rng.uniform(p.bounds[:, 0], p.bounds[:, 1], size=(10_000, p.dim))
        vals = p.evaluate(x)
        assert np.any(np.all(vals > p.ref_point, axis=1))


class TestPolynomial:
    def test_zero_coefficients_zero_point(self):
        p = problems.make_polynomial(dim=4, seed=0)
        coeffs = problems.PolynomialProblem(4, 0).coefficients()
        x = np.clip(coeffs, 0, 1)[None, :]  # not used; direct zero check below
        val = p.evaluate(np.zeros((1, 4)))[0, 0]
        assert val == pytest.approx(np.prod(-coeffs))

    def test_hand_expansion_single_block(self):
        p = problems.make_polynomial(dim=4, seed=7)
        c = problems.PolynomialProblem(4, 7).coefficients()
        x = np.array([0.1, 0.4, 0.9, 0.3])
        want = (x[0] - c[0]) * (x[1] - c[1]) * (x[2] - c[2]) * (x[3] - c[3])
        assert p.evaluate(x[None, :])[0, 0] == pytest.approx(want, rel=1e-12)

    def test_blocks_sum(self):
        p = problems.make_polynomial(dim=8, seed=8)
        c = problems.PolynomialProblem(8, 8).coefficients()
        x = np.linspace(0.1, 0.8, 8)
        want = np.prod(x[:4] - c[:4]) + np.prod(x[4:] - c[4:])
        assert p.evaluate(x[None, :])[0, 0] == pytest.approx(want, rel=1e-12)

    def test_deterministic_per_seed(self):
        a = problems.make_polynomial(dim=8, seed=9)
        b = problems.make_polynomial(dim=8, seed=9)
        x = np.random.default_rng(0).uniform(size=(5, 8))
        np.testing.assert_array_equal(a.evaluate(x), b.evaluate(x))

    def test_bad_dimension(self):
        with pytest.raises(BadDimension):
            problems.make_polynomial(dim=6)


class TestNnDraw:
    def test_frozen_weights(self):
        p = problems.make_nn_draw(dim=10, seed=1)
        x = np.random.default_rng(2).uniform(size=(3, 10))
        np.testing.assert_array_equal(p.evaluate(x), p.evaluate(x))
        q = problems.make_nn_draw(dim=10, seed=1)
        np.testing.assert_array_equal(p.evaluate(x), q.evaluate(x))

    def test_output_bounded_by_last_layer(self):
        desc = problems.NnDrawProblem(10, seed=3)
        p = problems.make_nn_draw(dim=10, seed=3)
        from bobench import mlp

        w_last, b_last = mlp.unflatten(desc.spec(), desc.weights())[-1]
        bound = np.abs(w_last).sum() + abs(float(b_last[0]))
        x = np.random.default_rng(4).uniform(size=(500, 10))
        assert np.all(np.abs(p.evaluate(x)) <= bound + 1e-9)

    def test_output_scale_sane_across_seeds(self):
        rng = np.random.default_rng(5)
        stds = []
        for seed in range(30):
            p = problems.make_nn_draw(dim=20, seed=seed)
            x = rng.uniform(size=(2_000, 20))
            stds.append(p.evaluate(x).std())
        assert 0.1 < np.median(stds) < 100.0


class TestNonstationary1d:
    def test_amplitude_ratio(self):
        assert problems.NONSTATIONARY_AMP_IN / problems.NONSTATIONARY_AMP_OUT > 5.0

    def test_global_max_inside_band_by_grid(self):
        p = make_problem("nonstationary1d")
        grid = np.linspace(-6, 6, 200_001)[:, None]
        vals = p.evaluate(grid)[:, 0]
        x_star = grid[np.argmax(vals), 0]
        assert abs(x_star) <= problems.NONSTATIONARY_BAND
        assert vals.max() == pytest.approx(p.known_best, abs=1e-6)

    def test_downward_trend_in_window_means(self):
        p = make_problem("nonstationary1d")
        left = p.evaluate(np.linspace(-6, -5, 2001)[:, None]).mean()
        right = p.evaluate(np.linspace(5, 6, 2001)[:, None]).mean()
        assert left > right


class TestRegistry:
    def test_listing(self):
        rows = problems.list_problems()
        names = {r["name"] for r in rows}
        assert {"branin", "hartmann6", "ackley", "dtlz1", "dtlz5", "polynomial",
                "nn_draw", "nonstationary1d", "branincurrin", "currin"} <= names

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            make_problem("nope")

    @pytest.mark.parametrize("name,kwargs,count", [
        ("branin", {}, 1_000_000),
        ("hartmann6", {}, 200_000),
        ("ackley", {"dim": 10}, 1_000_000),
        ("dtlz1", {}, 1_000_000),
        ("dtlz5", {}, 1_000_000),
        ("branincurrin", {}, 1_000_000),
        ("polynomial", {"dim": 16}, 1_000_000),
        ("nn_draw", {"dim": 20}, 200_000),
        ("nonstationary1d", {}, 1_000_000),
    ])
    def test_always_finite(self, name, kwargs, count):
        p = make_problem(name, **kwargs)
        rng = np.random.default_rng(hash(name) % 2**32)
        x = rng.uniform(p.bounds[:, 0], p.bounds[:, 1], size=(count, p.dim))
        assert np.all(np.isfinite(p.evaluate(x)))
