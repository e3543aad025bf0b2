"""Benchmark objectives, all converted to maximization.

Closed-form synthetic functions (Branin, Currin, Hartmann-6, Ackley, DTLZ1,
DTLZ5), two constructed high-dimensional families (random block polynomial
and a frozen network draw), and a 1-d band-structured toy whose variance is
large inside |x| <= 2 and small outside with a slight downward drift.

Reference points for multi-objective problems follow one frozen rule: the
coordinatewise minimum over 10^4 quasi-random evaluations minus a 10% margin
of the observed range, using a per-problem fixed seed. The chosen point is
recorded in Problem.meta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import mlp as mlp_mod
from .errors import BadDimension, OutOfBounds
from .mlp import MlpSpec
from .numkit import sobol_points

REF_POINT_SAMPLES = 10_000
REF_POINT_MARGIN = 0.1


@dataclass
class Problem:
    name: str
    dim: int
    num_objectives: int
    bounds: np.ndarray  # (d, 2)
    _evaluate: Callable[[np.ndarray], np.ndarray]
    ref_point: np.ndarray | None = None
    known_best: float | None = None
    meta: dict = field(default_factory=dict)

    def evaluate(self, x) -> np.ndarray:
        """Raw objective values, (n, m); rejects points outside the box."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise BadDimension(f"{self.name} expects dim {self.dim}, got {x.shape[1]}")
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        tol = 1e-9 * (hi - lo)
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            raise OutOfBounds(f"query outside the {self.name} box")
        return self._evaluate(np.clip(x, lo, hi))


def _branin_raw(x1, x2):
    a, b, c = 1.0, 5.1 / (4 * math.pi**2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * math.pi)
    return a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s


def _currin_raw(x1, x2):
    with np.errstate(divide="ignore"):
        damp = np.where(x2 > 0, 1.0 - np.exp(-1.0 / (2.0 * np.maximum(x2, 1e-300))), 1.0)
    num = 2300 * x1**3 + 1900 * x1**2 + 2092 * x1 + 60
    den = 100 * x1**3 + 500 * x1**2 + 4 * x1 + 20
    return damp * num / den


def make_branin() -> Problem:
    bounds = np.array([[-5.0, 10.0], [0.0, 15.0]])
    return Problem(
        "branin", 2, 1, bounds,
        lambda x: -_branin_raw(x[:, 0], x[:, 1])[:, None],
        known_best=-0.397887,
    )


def make_currin() -> Problem:
    bounds = np.array([[0.0, 1.0], [0.0, 1.0]])
    return Problem(
        "currin", 2, 1, bounds,
        lambda x: -_currin_raw(x[:, 0], x[:, 1])[:, None],
    )


_HARTMANN6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_HARTMANN6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ]
)
_HARTMANN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])


def make_hartmann6() -> Problem:
    def f(x):
        inner = np.einsum("ij,nij->ni", _HARTMANN6_A, (x[:, None, :] - _HARTMANN6_P) ** 2)
        return (_HARTMANN6_ALPHA @ np.exp(-inner.T))[:, None]

    return Problem(
        "hartmann6", 6, 1, np.array([[0.0, 1.0]] * 6), f, known_best=3.32237
    )


def make_ackley(dim: int = 10, box: str = "standard") -> Problem:
    if box == "standard":
        bounds = np.array([[-32.768, 32.768]] * dim)
    elif box == "small":
        bounds = np.array([[-5.0, 10.0]] * dim)
    else:
        raise ValueError("box must be 'standard' or 'small'")

    def f(x):
        term1 = -20.0 * np.exp(-0.2 * np.sqrt(np.mean(x * x, axis=1)))
        term2 = -np.exp(np.mean(np.cos(2 * math.pi * x), axis=1))
        return -(term1 + term2 + 20.0 + math.e)[:, None]

    return Problem(f"ackley{dim}", dim, 1, bounds, f, known_best=0.0,
                   meta={"box": box})


def _dtlz_g1(xm):
    z = xm - 0.5
    return 100.0 * (xm.shape[1] + np.sum(z * z - np.cos(20.0 * math.pi * z), axis=1))


def make_dtlz1(dim: int = 5, num_objectives: int = 2) -> Problem:
    m = num_objectives
    if dim < m:
        raise BadDimension("dtlz1 needs dim >= num_objectives")

    def f(x):
        g = _dtlz_g1(x[:, m - 1 :])
        out = np.empty((x.shape[0], m))
        for i in range(m):
            val = 0.5 * (1.0 + g)
            val = val * np.prod(x[:, : m - 1 - i], axis=1)
            if i > 0:
                val = val * (1.0 - x[:, m - 1 - i])
            out[:, i] = val
        return -out

    return _with_ref_point(Problem(f"dtlz1_d{dim}_m{m}", dim, m,
                                   np.array([[0.0, 1.0]] * dim), f), seed=11)


def make_dtlz5(dim: int = 6, num_objectives: int = 2) -> Problem:
    m = num_objectives
    if dim < m:
        raise BadDimension("dtlz5 needs dim >= num_objectives")

    def f(x):
        g = np.sum((x[:, m - 1 :] - 0.5) ** 2, axis=1)
        theta = np.empty((x.shape[0], m - 1))
        if m > 1:
            theta[:, 0] = 0.5 * math.pi * x[:, 0]
            for i in range(1, m - 1):
                theta[:, i] = (math.pi / (4.0 * (1.0 + g))) * (1.0 + 2.0 * g * x[:, i])
        out = np.empty((x.shape[0], m))
        for i in range(m):
            val = 1.0 + g
            val = val * np.prod(np.cos(theta[:, : m - 1 - i]), axis=1)
            if i > 0:
                val = val * np.sin(theta[:, m - 1 - i])
            out[:, i] = val
        return -out

    return _with_ref_point(Problem(f"dtlz5_d{dim}_m{m}", dim, m,
                                   np.array([[0.0, 1.0]] * dim), f), seed=12)


def make_branincurrin() -> Problem:
    bounds = np.array([[0.0, 1.0], [0.0, 1.0]])

    def f(x):
        b = _branin_raw(15.0 * x[:, 0] - 5.0, 15.0 * x[:, 1])
        c = _currin_raw(x[:, 0], x[:, 1])
        return np.stack([-b, -c], axis=1)

    return _with_ref_point(Problem("branincurrin", 2, 2, bounds, f), seed=13)


@dataclass(frozen=True)
class PolynomialProblem:
    """Sum of products over non-overlapping blocks of four coordinates.

    value(x) = sum_i prod_{j=1..4} (x[4(i-1)+j] - c[4(i-1)+j]), c ~ N(0, 1)
    frozen at construction by the seed.
    """

    dim: int
    seed: int = 0

    def coefficients(self) -> np.ndarray:
        return np.random.default_rng(self.seed).standard_normal(self.dim)


def make_polynomial(dim: int = 32, seed: int = 0) -> Problem:
    if dim % 4 != 0:
        raise BadDimension("polynomial dimension must be divisible by 4")
    desc = PolynomialProblem(dim, seed)
    coeffs = desc.coefficients()

    def f(x):
        diff = (x - coeffs).reshape(x.shape[0], dim // 4, 4)
        return np.sum(np.prod(diff, axis=2), axis=1)[:, None]

    return Problem(f"polynomial_d{dim}", dim, 1, np.array([[0.0, 1.0]] * dim), f,
                   meta={"seed": seed})


@dataclass(frozen=True)
class NnDrawProblem:
    """Objective fixed to the output of a frozen random network draw."""

    dim: int
    seed: int = 0
    hidden_widths: tuple[int, ...] = (256, 256)
    activation: str = "tanh"

    def spec(self) -> MlpSpec:
        return MlpSpec(self.dim, self.hidden_widths, 1, activation=self.activation)

    def weights(self) -> np.ndarray:
        spec = self.spec()
        return np.random.default_rng(self.seed).standard_normal(spec.n_params)


def make_nn_draw(dim: int = 100, seed: int = 0,
                 hidden_widths: tuple[int, ...] = (256, 256),
                 activation: str = "tanh") -> Problem:
    desc = NnDrawProblem(dim, seed, tuple(hidden_widths), activation)
    spec = desc.spec()
    weights = desc.weights()

    def f(x):
        return mlp_mod.mlp_forward(spec, weights, x)

    return Problem(f"nn_draw_d{dim}", dim, 1, np.array([[0.0, 1.0]] * dim), f,
                   meta={"seed": seed, "hidden_widths": list(desc.hidden_widths),
                         "activation": activation})


NONSTATIONARY_BAND = 2.0
NONSTATIONARY_AMP_IN = 0.8
NONSTATIONARY_AMP_OUT = 0.15
NONSTATIONARY_FREQ = 3.0
NONSTATIONARY_TREND = -0.05


def _nonstationary_best() -> float:
    # Stationary point of 0.8 sin(3x) - 0.05 x nearest 3x = -3pi/2.
    delta = math.asin(-NONSTATIONARY_TREND / (NONSTATIONARY_AMP_IN * NONSTATIONARY_FREQ))
    return NONSTATIONARY_AMP_IN * math.cos(delta) - NONSTATIONARY_TREND * (
        (1.5 * math.pi + delta) / NONSTATIONARY_FREQ
    )


def make_nonstationary1d() -> Problem:
    def f(x):
        t = x[:, 0]
        amp = np.where(np.abs(t) <= NONSTATIONARY_BAND, NONSTATIONARY_AMP_IN,
                       NONSTATIONARY_AMP_OUT)
        return (amp * np.sin(NONSTATIONARY_FREQ * t) + NONSTATIONARY_TREND * t)[:, None]

    return Problem("nonstationary1d", 1, 1, np.array([[-6.0, 6.0]]), f,
                   known_best=_nonstationary_best())


def _with_ref_point(problem: Problem, seed: int) -> Problem:
    pts = problem.bounds[:, 0] + sobol_points(problem.dim, REF_POINT_SAMPLES, seed=seed) * (
        problem.bounds[:, 1] - problem.bounds[:, 0]
    )
    vals = problem._evaluate(pts)
    lo = vals.min(axis=0)
    hi = vals.max(axis=0)
    problem.ref_point = lo - REF_POINT_MARGIN * (hi - lo)
    problem.meta["ref_point_rule"] = (
        f"min over {REF_POINT_SAMPLES} quasi-random evals minus {REF_POINT_MARGIN:.0%} "
        f"of range, seed {seed}"
    )
    problem.meta["ref_point"] = [float(v) for v in problem.ref_point]
    return problem


REGISTRY: dict[str, Callable[..., Problem]] = {
    "branin": make_branin,
    "currin": make_currin,
    "hartmann6": make_hartmann6,
    "ackley": make_ackley,
    "branincurrin": make_branincurrin,
    "dtlz1": make_dtlz1,
    "dtlz5": make_dtlz5,
    "polynomial": make_polynomial,
    "nn_draw": make_nn_draw,
    "nonstationary1d": make_nonstationary1d,
}


def make_problem(name: str, **params) -> Problem:
    if name not in REGISTRY:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name](**params)


def list_problems() -> list[dict]:
    """Registry summary with default-parameter metadata, for the CLI listing."""
    rows = []
    for name in sorted(REGISTRY):
        p = REGISTRY[name]()
        rows.append(
            {
                "name": name,
                "dim": p.dim,
                "objectives": p.num_objectives,
                "bounds": [list(map(float, b)) for b in p.bounds[:2]],
                "known_best": p.known_best,
                "ref_point": None if p.ref_point is None else [float(v) for v in p.ref_point],
            }
        )
    return rows
