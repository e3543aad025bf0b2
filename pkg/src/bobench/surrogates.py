"""The unified surrogate contract.

One entry point fits any of the seven model kinds on observed raw data and
hands back an object that emits joint latent-function draws at candidate
points, in raw output units under the maximization convention. Inputs are
min-max normalized to [0,1]^d and outputs standardized per objective before
any model sees them; GP-family kinds fit one independent model per objective
while finite-width BNN samplers fit a single network with one output head per
objective.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import gp as gp_mod
from . import posteriors as post_mod
from .errors import AllDiverged, DegenerateBounds, FitFailed, NonFiniteState, OutOfBounds
from .gp import (
    DklConfig,
    GpOptConfig,
    GpPriorConfig,
    IbnnKernelSpec,
)
from .mlp import MlpSpec
from .numkit import Rng, cholesky, derive_seed, sobol_normal, tri_solve
from .posteriors import (
    EnsembleConfig,
    HmcConfig,
    LlaConfig,
    SghmcConfig,
    predictive_draws,
)

GP_FAMILY = ("gp", "ibnn", "dkl", "lla")
BNN_FAMILY = ("hmc", "sghmc", "ensemble")
SURROGATE_KINDS = GP_FAMILY + BNN_FAMILY


@dataclass
class Transforms:
    """Input min-max and per-objective output standardization state."""

    bounds: np.ndarray  # (d, 2)
    y_mean: np.ndarray  # (m,)
    y_std: np.ndarray  # (m,)

    def normalize_x(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (x - lo) / (hi - lo)

    def denormalize_x(self, xn) -> np.ndarray:
        xn = np.atleast_2d(np.asarray(xn, dtype=float))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + xn * (hi - lo)

    def standardize_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def destandardize_y(self, ys) -> np.ndarray:
        return np.asarray(ys, dtype=float) * self.y_std + self.y_mean


@dataclass
class Dataset:
    """Raw observations inside the problem's input box."""

    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n, m)
    bounds: np.ndarray  # (d, 2)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(self.bounds)) or np.any(
            self.bounds[:, 0] >= self.bounds[:, 1]
        ):
            raise DegenerateBounds("bounds must be finite with lo < hi per dimension")
        if self.x.shape[1] != self.bounds.shape[0]:
            raise ValueError("x and bounds disagree on the input dimension")
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y row counts differ")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def num_objectives(self) -> int:
        return self.y.shape[1]


def normalize(dataset: Dataset) -> tuple[np.ndarray, np.ndarray, Transforms]:
    """Min-max inputs to [0,1], standardize outputs; constant objectives get std 1."""
    y_mean = dataset.y.mean(axis=0)
    y_std = dataset.y.std(axis=0)
    y_std = np.where(y_std > 0.0, y_std, 1.0)
    tf = Transforms(dataset.bounds.copy(), y_mean, y_std)
    return tf.normalize_x(dataset.x), tf.standardize_y(dataset.y), tf


@dataclass
class SurrogateConfig:
    """Which model to fit and every kind-specific knob it might need.

    ``mlp`` is an architecture template; its input/output dims are adapted to
    the dataset at fit time.
    """

    kind: str = "gp"
    mlp: MlpSpec | None = None
    ibnn: IbnnKernelSpec = field(default_factory=IbnnKernelSpec)
    ibnn_likelihood_variance: float = gp_mod.DEFAULT_IBNN_NOISE
    gp_priors: GpPriorConfig = field(default_factory=GpPriorConfig)
    gp_opt: GpOptConfig = field(default_factory=GpOptConfig)
    hmc: HmcConfig = field(default_factory=HmcConfig)
    sghmc: SghmcConfig = field(default_factory=SghmcConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    lla: LlaConfig = field(default_factory=LlaConfig)
    dkl: DklConfig = field(default_factory=DklConfig)

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"kind must be one of {SURROGATE_KINDS}")

    def adapted_mlp(self, input_dim: int, output_dim: int) -> MlpSpec:
        if self.mlp is None:
            raise ValueError(f"surrogate kind {self.kind!r} needs an mlp architecture")
        return dataclasses.replace(self.mlp, input_dim=input_dim, output_dim=output_dim)


class FittedSurrogate:
    """Fit result: per-objective GP-style predictors or one weight posterior."""

    def __init__(self, kind, transforms, models, posterior, diagnostics):
        self.kind = kind
        self.transforms = transforms
        self.models = models  # GP family: list of per-objective predictors
        self.posterior = posterior  # BNN family: WeightPosterior
        self.diagnostics = diagnostics

    @property
    def num_objectives(self) -> int:
        if self.models is not None:
            return len(self.models)
        return self.posterior.spec.output_dim

    def _check_bounds(self, xq_raw: np.ndarray) -> None:
        lo, hi = self.transforms.bounds[:, 0], self.transforms.bounds[:, 1]
        tol = 1e-9 * (hi - lo)
        if np.any(xq_raw < lo - tol) or np.any(xq_raw > hi + tol):
            raise OutOfBounds("query point outside the problem bounds")

    def draws(self, xq_raw, count: int, rng: Rng) -> np.ndarray:
        """count x q x m joint latent-function draws in raw output units."""
        xq_raw = np.atleast_2d(np.asarray(xq_raw, dtype=float))
        self._check_bounds(xq_raw)
        xn = self.transforms.normalize_x(xq_raw)
        q = xn.shape[0]
        m = self.num_objectives
        out = np.empty((count, q, m))
        if self.models is not None:
            for k, model in enumerate(self.models):
                mean, cov = model.predict(xn)
                L, _ = cholesky(cov)
                z = rng.standard_normal((count, q))
                out[:, :, k] = mean[None, :] + z @ L.T
        else:
            out[:] = predictive_draws(self.posterior, xn, count, include_noise=False, rng=rng)
        return out * self.transforms.y_std + self.transforms.y_mean

    def fixed_sampler(self, count: int, max_slots: int, rng: Rng) -> "FixedSampler":
        """Sampler with base randomness frozen at construction.

        Joint draws become a deterministic function of the query points, which
        turns Monte-Carlo acquisition values into a deterministic objective
        that local refinement can optimize.
        """
        if self.models is not None:
            return _GpFixedSampler(self, count, max_slots, rng)
        return _BnnFixedSampler(self, count, rng)


class FixedSampler:
    def sel_and_candidate_draws(self, x_sel_raw, x_pool_raw):
        """(count x j x m draws at the selected batch, count x P x m slot-(j+1) draws).

        Candidate draws are jointly consistent with the selected-point draws:
        for each base sample, pairing any one candidate with the selected
        block yields a valid joint posterior draw at those j+1 points.
        """
        raise NotImplementedError


class _GpFixedSampler(FixedSampler):
    def __init__(self, fitted: FittedSurrogate, count: int, max_slots: int, rng: Rng):
        self.fitted = fitted
        self.count = count
        m = fitted.num_objectives
        self.z = sobol_normal((max_slots + 1) * m, count, seed=derive_seed(rng)).reshape(
            count, max_slots + 1, m
        )
        # Per-objective cache keyed on the selected batch: conditioning
        # context, Cholesky of the batch covariance, and frozen batch draws.
        self._cache: dict = {}

    def _sel_state(self, k: int, xn_sel: np.ndarray):
        key = (k, xn_sel.tobytes())
        if key not in self._cache:
            ctx = self.fitted.models[k].conditioning_context(xn_sel)
            j = xn_sel.shape[0]
            if j:
                L, _ = cholesky(ctx.cov_sel)
                f_sel = ctx.mean_sel[None, :] + self.z[:, :j, k] @ L.T
            else:
                L = np.empty((0, 0))
                f_sel = np.empty((self.count, 0))
            self._cache[key] = (ctx, L, f_sel)
        return self._cache[key]

    def sel_and_candidate_draws(self, x_sel_raw, x_pool_raw):
        tf = self.fitted.transforms
        x_sel = np.atleast_2d(np.asarray(x_sel_raw, dtype=float)).reshape(-1, tf.bounds.shape[0])
        x_pool = np.atleast_2d(np.asarray(x_pool_raw, dtype=float))
        xn_sel = tf.normalize_x(x_sel) if x_sel.shape[0] else x_sel
        xn_pool = tf.normalize_x(x_pool)
        j = x_sel.shape[0]
        if j + 1 > self.z.shape[1]:
            raise ValueError("selected batch exceeds the sampler's slot capacity")
        n_pool = x_pool.shape[0]
        m = self.fitted.num_objectives
        draws_sel = np.empty((self.count, j, m))
        draws_cand = np.empty((self.count, n_pool, m))
        for k in range(m):
            ctx, L, f_sel = self._sel_state(k, xn_sel)
            mean_pool, cross, var_pool = ctx.pool_blocks(xn_pool)
            zk = self.z[:, :, k]
            if j:
                draws_sel[:, :, k] = f_sel
                w = tri_solve(L, tri_solve(L, cross.T), transposed=True)  # (j, P)
                cond_var = np.maximum(var_pool - np.sum(cross * w.T, axis=1), 0.0)
                cond_mean = mean_pool[None, :] + (f_sel - ctx.mean_sel[None, :]) @ w
                draws_cand[:, :, k] = cond_mean + np.sqrt(cond_var)[None, :] * zk[:, j : j + 1]
            else:
                draws_cand[:, :, k] = (
                    mean_pool[None, :] + np.sqrt(var_pool)[None, :] * zk[:, 0:1]
                )
        y_std, y_mean = self.fitted.transforms.y_std, self.fitted.transforms.y_mean
        return draws_sel * y_std + y_mean, draws_cand * y_std + y_mean


class _BnnFixedSampler(FixedSampler):
    def __init__(self, fitted: FittedSurrogate, count: int, rng: Rng):
        self.fitted = fitted
        post = fitted.posterior
        n_samples = post.samples.shape[0]
        idx = rng.choice(n_samples, size=count, replace=count > n_samples)
        self.uniq, self.inverse = np.unique(idx, return_inverse=True)

    def _eval(self, xn: np.ndarray) -> np.ndarray:
        post = self.fitted.posterior
        from .mlp import mlp_forward

        outs = np.stack([mlp_forward(post.spec, post.samples[i], xn) for i in self.uniq])
        return outs[self.inverse]

    def sel_and_candidate_draws(self, x_sel_raw, x_pool_raw):
        tf = self.fitted.transforms
        d = tf.bounds.shape[0]
        x_sel = np.atleast_2d(np.asarray(x_sel_raw, dtype=float)).reshape(-1, d)
        x_pool = np.atleast_2d(np.asarray(x_pool_raw, dtype=float))
        j = x_sel.shape[0]
        xn = tf.normalize_x(np.vstack([x_sel, x_pool]) if j else x_pool)
        draws = self._eval(xn) * tf.y_std + tf.y_mean
        return draws[:, :j, :], draws[:, j:, :]


def _wrap_failure(kind: str, exc: Exception) -> FitFailed:
    return FitFailed(f"{kind} fit failed: {exc}")


def fit(config: SurrogateConfig, dataset: Dataset, rng: Rng) -> FittedSurrogate:
    """Fit the configured surrogate on normalized data."""
    if dataset.n < 1:
        raise ValueError("dataset must contain at least one observation")
    xn, ys, tf = normalize(dataset)
    m = dataset.num_objectives
    d = xn.shape[1]
    diagnostics: dict = {"kind": config.kind}

    try:
        if config.kind in BNN_FAMILY:
            spec = config.adapted_mlp(d, m)
            if config.kind == "hmc":
                posterior = post_mod.hmc_sample(spec, xn, ys, config.hmc, rng)
            elif config.kind == "sghmc":
                posterior = post_mod.sghmc_sample(spec, xn, ys, config.sghmc, rng)
            else:
                posterior = post_mod.ensemble_fit(spec, xn, ys, config.ensemble, rng)
            diagnostics.update(posterior.diagnostics)
            return FittedSurrogate(config.kind, tf, None, posterior, diagnostics)

        if config.kind == "lla":
            spec = config.adapted_mlp(d, m)
            state = post_mod.lla_fit(spec, xn, ys, config.lla, rng)
            diagnostics.update(state.diagnostics)
            return FittedSurrogate(config.kind, tf, list(state.heads), None, diagnostics)

        models = []
        for k, child in enumerate(rng.spawn(m)):
            yk = ys[:, k]
            if config.kind == "gp":
                state = gp_mod.gp_fit(
                    "matern52", xn, yk, priors=config.gp_priors, opt=config.gp_opt, rng=child
                )
            elif config.kind == "ibnn":
                state = gp_mod.gp_fit(
                    config.ibnn, xn, yk,
                    likelihood_variance=config.ibnn_likelihood_variance,
                )
            else:  # dkl
                arch = config.adapted_mlp(d, 1)
                state = gp_mod.dkl_fit(arch, xn, yk, config.dkl, rng=child,
                                       priors=config.gp_priors)
            diagnostics[f"objective_{k}"] = dict(
                state.diagnostics if not isinstance(state, gp_mod.DklState)
                else state.gp.diagnostics
            )
            models.append(state)
        return FittedSurrogate(config.kind, tf, models, None, diagnostics)
    except FitFailed as exc:
        raise _wrap_failure(config.kind, exc) from exc
    except (NonFiniteState, AllDiverged) as exc:
        raise _wrap_failure(config.kind, exc) from exc
