"""Exact Gaussian process regression with three kernel sources.

Kernels: Matern-5/2 (hyperparameters trained by MAP on the marginal
likelihood), the infinite-width ReLU network kernel (fixed, never trained),
and deep-kernel-learning composition (Matern on learned network features,
trained jointly). All fitting assumes inputs already normalized to [0,1]^d
and targets standardized; the surrogate layer owns those transforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mlp as mlp_mod
from .errors import FitFailed
from .mlp import MlpSpec
from .numkit import Rng, chol_inverse, cholesky, gamma_logpdf, tri_solve

SQRT5 = math.sqrt(5.0)

# Observation noise used when conditioning the fixed infinite-width kernel.
DEFAULT_IBNN_NOISE = 1e-4


@dataclass
class Matern52Hypers:
    """lengthscale is a scalar (shared) or a length-d array (ARD)."""

    lengthscale: float | np.ndarray = 0.5
    outputscale: float = 1.0
    likelihood_variance: float = 1e-2

    def validate(self, dim: int) -> None:
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        if np.any(ls <= 0) or self.outputscale <= 0 or self.likelihood_variance <= 0:
            raise ValueError("Matern hyperparameters must be strictly positive")
        if ls.size not in (1, dim):
            raise ValueError("per-dimension lengthscale must match the input dim")


@dataclass(frozen=True)
class IbnnKernelSpec:
    """Infinite-width fully-connected ReLU network kernel."""

    depth: int = 3
    weight_variance: float = 10.0
    bias_variance: float = 1.3
    activation: str = "relu"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.weight_variance <= 0 or self.bias_variance < 0:
            raise ValueError("variances must be positive")
        if self.activation != "relu":
            raise ValueError("only the ReLU arc-cosine closed form is supported")


@dataclass
class GpPriorConfig:
    lengthscale_gamma: tuple[float, float] = (3.0, 6.0)
    outputscale_gamma: tuple[float, float] = (2.0, 0.15)
    enabled: bool = True


@dataclass
class GpOptConfig:
    restarts: int = 3
    iterations: int = 200
    learning_rate: float = 0.05
    grad_tol: float = 1e-5
    ard: bool = False


@dataclass
class DklConfig:
    iterations: int = 500
    learning_rate: float = 1e-2
    # Hyperparameter-only warmup before the joint run; guards the joint
    # objective against wild kernel scales at the initial random features.
    warmup_iterations: int = 100


def _sqdists(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    na = np.sum(xa * xa, axis=1)
    nb = np.sum(xb * xb, axis=1)
    d2 = na[:, None] + nb[None, :] - 2.0 * xa @ xb.T
    return np.maximum(d2, 0.0)


def _matern_shape(r: np.ndarray) -> np.ndarray:
    return (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def _matern_dshape_dlog_ell(r: np.ndarray) -> np.ndarray:
    # d/d(log ell) of the shape function; equals (5/3) r^2 (1 + sqrt5 r) e^{-sqrt5 r}.
    return (5.0 / 3.0) * r * r * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)


def _matern_dshape_over_r(r: np.ndarray) -> np.ndarray:
    # M'(r) / r, finite at r = 0 (limit -5/3).
    return -(5.0 / 3.0) * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)


def matern52_matrix(xa, xb, lengthscale, outputscale) -> np.ndarray:
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    ls = np.atleast_1d(np.asarray(lengthscale, dtype=float))
    r = np.sqrt(_sqdists(xa / ls, xb / ls))
    return outputscale * _matern_shape(r)


def matern52(x, x2, hypers: Matern52Hypers) -> float:
    """Kernel value for a single pair of points."""
    return float(matern52_matrix(x, x2, hypers.lengthscale, hypers.outputscale)[0, 0])


def nngp_cross(xa, xb, spec: IbnnKernelSpec):
    """Cross kernel plus both diagonals after `depth` arc-cosine layers."""
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    d = xa.shape[1]
    sw, sb = spec.weight_variance, spec.bias_variance
    kaa = sb + sw * np.sum(xa * xa, axis=1) / d
    kbb = sb + sw * np.sum(xb * xb, axis=1) / d
    kab = sb + sw * (xa @ xb.T) / d
    for _ in range(spec.depth):
        norm = np.sqrt(kaa[:, None] * kbb[None, :])
        cos_t = np.clip(kab / norm, -1.0, 1.0)
        theta = np.arccos(cos_t)
        kab = sb + (sw / (2.0 * math.pi)) * norm * (np.sin(theta) + (math.pi - theta) * cos_t)
        kaa = sb + 0.5 * sw * kaa
        kbb = sb + 0.5 * sw * kbb
    return kab, kaa, kbb


def nngp_matrix(xa, xb, spec: IbnnKernelSpec) -> np.ndarray:
    return nngp_cross(xa, xb, spec)[0]


def nngp_kernel(x, x2, spec: IbnnKernelSpec) -> float:
    return float(nngp_matrix(np.atleast_2d(x), np.atleast_2d(x2), spec)[0, 0])


class MaternKernel:
    def __init__(self, hypers: Matern52Hypers):
        self.hypers = hypers

    def matrix(self, xa, xb) -> np.ndarray:
        return matern52_matrix(xa, xb, self.hypers.lengthscale, self.hypers.outputscale)

    def diag(self, xa) -> np.ndarray:
        return np.full(np.atleast_2d(xa).shape[0], self.hypers.outputscale)


class IbnnKernel:
    def __init__(self, spec: IbnnKernelSpec):
        self.spec = spec

    def matrix(self, xa, xb) -> np.ndarray:
        return nngp_matrix(xa, xb, self.spec)

    def diag(self, xa) -> np.ndarray:
        xa = np.atleast_2d(np.asarray(xa, dtype=float))
        d = xa.shape[1]
        sw, sb = self.spec.weight_variance, self.spec.bias_variance
        k = sb + sw * np.sum(xa * xa, axis=1) / d
        for _ in range(self.spec.depth):
            k = sb + 0.5 * sw * k
        return k


@dataclass
class GpState:
    """Fitted GP: kernel, training data, Cholesky factor, cached alpha."""

    kernel: object
    x: np.ndarray
    y: np.ndarray
    likelihood_variance: float
    chol: np.ndarray
    alpha: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def predict(self, xq) -> tuple[np.ndarray, np.ndarray]:
        """Latent-f posterior mean and covariance (no observation noise added)."""
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        kqx = self.kernel.matrix(xq, self.x)
        mean = kqx @ self.alpha
        v = tri_solve(self.chol, kqx.T)
        cov = self.kernel.matrix(xq, xq) - v.T @ v
        cov = 0.5 * (cov + cov.T)
        return mean, cov

    def predict_marginal(self, xq) -> tuple[np.ndarray, np.ndarray]:
        """Mean and pointwise latent variance; O(n^2 q) instead of O(n^2 q + q^2)."""
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        kqx = self.kernel.matrix(xq, self.x)
        mean = kqx @ self.alpha
        v = tri_solve(self.chol, kqx.T)
        var = self.kernel.diag(xq) - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def conditioning_context(self, x_sel) -> "GpConditioningContext":
        return GpConditioningContext(self, np.atleast_2d(np.asarray(x_sel, dtype=float)))


class GpConditioningContext:
    """Selected-block posterior quantities cached for repeated pool queries.

    Acquisition refinement probes thousands of small pools against the same
    selected batch; everything that depends only on the batch is computed once
    here.
    """

    def __init__(self, state: GpState, x_sel: np.ndarray):
        self.state = state
        self.x_sel = x_sel
        j = x_sel.shape[0]
        if j:
            kqx = state.kernel.matrix(x_sel, state.x)
            self.v_sel = tri_solve(state.chol, kqx.T)  # (n, j)
            self.mean_sel = kqx @ state.alpha
            cov = state.kernel.matrix(x_sel, x_sel) - self.v_sel.T @ self.v_sel
            self.cov_sel = 0.5 * (cov + cov.T)
        else:
            self.v_sel = np.empty((state.n, 0))
            self.mean_sel = np.empty(0)
            self.cov_sel = np.empty((0, 0))

    def pool_blocks(self, x_pool: np.ndarray):
        """(mean_pool, cross (P x j), var_pool) against this context's batch."""
        state = self.state
        kqx = state.kernel.matrix(x_pool, state.x)
        mean_pool = kqx @ state.alpha
        v = tri_solve(state.chol, kqx.T)
        var_pool = np.maximum(state.kernel.diag(x_pool) - np.sum(v * v, axis=0), 0.0)
        if self.x_sel.shape[0]:
            cross = state.kernel.matrix(x_pool, self.x_sel) - v.T @ self.v_sel
        else:
            cross = np.empty((x_pool.shape[0], 0))
        return mean_pool, cross, var_pool


def _condition(kernel, x, y, noise) -> tuple[np.ndarray, np.ndarray, float]:
    k = kernel.matrix(x, x)
    L, jitter = cholesky(k + noise * np.eye(x.shape[0]))
    alpha = tri_solve(L, tri_solve(L, y), transposed=True)
    return L, alpha, jitter


def gp_mll(state: GpState) -> float:
    """-1/2 y^T alpha - sum(log L_ii) - n/2 log(2 pi)."""
    return float(
        -0.5 * state.y @ state.alpha
        - np.sum(np.log(np.diag(state.chol)))
        - 0.5 * state.n * math.log(2.0 * math.pi)
    )


def gp_sample(state: GpState, xq, count: int, rng: Rng) -> np.ndarray:
    """Joint posterior draws at xq: count x q matrix."""
    mean, cov = state.predict(xq)
    L, _ = cholesky(cov)
    from .numkit import mvn_sample

    return mvn_sample(mean, L, count, rng)


def _log_prior_and_grad(log_val: float, gamma: tuple[float, float]) -> tuple[float, float]:
    # Gamma log-density of the raw parameter, differentiated w.r.t. its log.
    a, b = gamma
    val = math.exp(log_val)
    return gamma_logpdf(val, a, b), (a - 1.0) - b * val


def matern_objective(x, y, priors: GpPriorConfig | None = None, ard: bool = False):
    """Closure computing MAP objective and gradient in log-hyperparameter space.

    phi layout: [log ell (1 or d entries), log outputscale, log noise].
    Objective = marginal log likelihood + Gamma log-priors on lengthscale and
    outputscale (no prior on the noise).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = x.shape
    priors = priors if priors is not None else GpPriorConfig()
    n_ls = d if ard else 1
    d2_shared = _sqdists(x, x) if not ard else None
    eye = np.eye(n)

    def value_and_grad(phi: np.ndarray) -> tuple[float, np.ndarray]:
        log_ls = phi[:n_ls]
        s2 = math.exp(phi[n_ls])
        noise = math.exp(phi[n_ls + 1])
        ls = np.exp(log_ls)

        if ard:
            r2 = _sqdists(x / ls, x / ls)
        else:
            r2 = d2_shared / (ls[0] * ls[0])
        r = np.sqrt(r2)
        kf = s2 * _matern_shape(r)
        L, _ = cholesky(kf + noise * eye, symmetry_check=False)
        alpha = tri_solve(L, tri_solve(L, y), transposed=True)
        mll = (
            -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2.0 * math.pi)
        )

        s_mat = 0.5 * (np.outer(alpha, alpha) - chol_inverse(L))

        grad = np.empty_like(phi)
        if ard:
            t = s2 * _matern_dshape_over_r(r) * s_mat
            for j in range(d):
                dj2 = (x[:, j, None] - x[None, :, j]) ** 2 / (ls[j] * ls[j])
                grad[j] = -np.sum(t * dj2)
        else:
            grad[0] = np.sum(s_mat * (s2 * _matern_dshape_dlog_ell(r)))
        grad[n_ls] = np.sum(s_mat * kf)
        grad[n_ls + 1] = noise * np.trace(s_mat)

        value = float(mll)
        if priors.enabled:
            for j in range(n_ls):
                pv, pg = _log_prior_and_grad(float(log_ls[j]), priors.lengthscale_gamma)
                value += pv
                grad[j] += pg
            pv, pg = _log_prior_and_grad(float(phi[n_ls]), priors.outputscale_gamma)
            value += pv
            grad[n_ls] += pg
        return value, grad

    return value_and_grad


def _draw_matern_init(rng: Rng, priors: GpPriorConfig, n_ls: int, y_var: float) -> np.ndarray:
    a_l, b_l = priors.lengthscale_gamma
    a_s, b_s = priors.outputscale_gamma
    log_ls = np.log(rng.gamma(a_l, 1.0 / b_l, size=n_ls))
    log_s2 = math.log(max(rng.gamma(a_s, 1.0 / b_s), 1e-3))
    log_noise = math.log(max(y_var, 1e-8)) + rng.uniform(-6.0, -0.5)
    return np.concatenate([log_ls, [log_s2, log_noise]])


def gp_fit(
    kernel_source,
    x,
    y,
    priors: GpPriorConfig | None = None,
    opt: GpOptConfig | None = None,
    rng: Rng | None = None,
    likelihood_variance: float | None = None,
) -> GpState:
    """Fit a GP. kernel_source is "matern52" (MAP-trained) or an IbnnKernelSpec.

    The infinite-width kernel is a fixed strong prior: its hyperparameters are
    never learned, only the Gram matrix is conditioned (noise from
    ``likelihood_variance``, default DEFAULT_IBNN_NOISE).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] < 1 or x.shape[0] != y.shape[0]:
        raise ValueError("need n >= 1 rows with matching targets")

    if isinstance(kernel_source, IbnnKernelSpec):
        noise = DEFAULT_IBNN_NOISE if likelihood_variance is None else float(likelihood_variance)
        kernel = IbnnKernel(kernel_source)
        L, alpha, jitter = _condition(kernel, x, y, noise)
        state = GpState(kernel, x, y, noise, L, alpha, {"jitter": jitter, "trained": False})
        state.diagnostics["mll"] = gp_mll(state)
        return state

    if kernel_source != "matern52":
        raise ValueError(f"unknown kernel source: {kernel_source!r}")

    priors = priors if priors is not None else GpPriorConfig()
    opt = opt if opt is not None else GpOptConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    n_ls = x.shape[1] if opt.ard else 1
    y_var = float(np.var(y)) if x.shape[0] > 1 else 1.0

    objective = matern_objective(x, y, priors, opt.ard)
    best = None
    failures: list[str] = []
    from .optim import adam_ascend

    for _ in range(max(1, opt.restarts)):
        phi0 = _draw_matern_init(rng, priors, n_ls, y_var)
        try:
            res = adam_ascend(
                objective, phi0, lr=opt.learning_rate, iterations=opt.iterations,
                grad_tol=opt.grad_tol,
            )
        except Exception as exc:  # noqa: BLE001 - restart failures are data, not bugs
            failures.append(str(exc))
            continue
        if np.isfinite(res.value) and (best is None or res.value > best.value):
            best = res
    if best is None:
        raise FitFailed(f"all Matern MLL restarts failed: {failures}")

    phi = best.x
    ls = np.exp(phi[:n_ls])
    hypers = Matern52Hypers(
        lengthscale=ls if opt.ard else float(ls[0]),
        outputscale=math.exp(phi[n_ls]),
        likelihood_variance=math.exp(phi[n_ls + 1]),
    )
    kernel = MaternKernel(hypers)
    L, alpha, jitter = _condition(kernel, x, y, hypers.likelihood_variance)
    state = GpState(
        kernel, x, y, hypers.likelihood_variance, L, alpha,
        {"jitter": jitter, "trained": True, "restarts": opt.restarts,
         "objective": best.value, "opt_iters": best.n_iters},
    )
    state.diagnostics["mll"] = gp_mll(state)
    return state


# ---------------------------------------------------------------------------
# Deep kernel learning
# ---------------------------------------------------------------------------


def feature_spec_from(arch: MlpSpec) -> MlpSpec:
    """The architecture minus its final layer; features are the last hidden activations."""
    if not arch.hidden_widths:
        raise ValueError("deep kernel learning needs at least one hidden layer")
    return MlpSpec(
        input_dim=arch.input_dim,
        hidden_widths=arch.hidden_widths[:-1],
        output_dim=arch.hidden_widths[-1],
        activation=arch.activation,
        prior_variance=arch.prior_variance,
        likelihood_variance=arch.likelihood_variance,
    )


def featurize(feature_spec: MlpSpec, weights: np.ndarray, x) -> np.ndarray:
    raw = mlp_mod.mlp_forward(feature_spec, weights, np.atleast_2d(np.asarray(x, dtype=float)))
    return mlp_mod._act(feature_spec, raw)


@dataclass
class DklState:
    feature_spec: MlpSpec
    feature_weights: np.ndarray
    gp: GpState
    diagnostics: dict = field(default_factory=dict)

    def predict(self, xq) -> tuple[np.ndarray, np.ndarray]:
        return self.gp.predict(featurize(self.feature_spec, self.feature_weights, xq))

    def predict_marginal(self, xq) -> tuple[np.ndarray, np.ndarray]:
        return self.gp.predict_marginal(featurize(self.feature_spec, self.feature_weights, xq))

    def conditioning_context(self, x_sel) -> "_DklConditioningContext":
        return _DklConditioningContext(self, np.atleast_2d(np.asarray(x_sel, dtype=float)))


class _DklConditioningContext:
    def __init__(self, state: DklState, x_sel: np.ndarray):
        self.state = state
        z_sel = featurize(state.feature_spec, state.feature_weights, x_sel) if x_sel.shape[0] \
            else np.empty((0, state.feature_spec.output_dim))
        self.inner = state.gp.conditioning_context(z_sel)
        self.mean_sel = self.inner.mean_sel
        self.cov_sel = self.inner.cov_sel

    def pool_blocks(self, x_pool: np.ndarray):
        z_pool = featurize(self.state.feature_spec, self.state.feature_weights, x_pool)
        return self.inner.pool_blocks(z_pool)


def dkl_objective(feature_spec: MlpSpec, x, y, priors: GpPriorConfig | None = None):
    """Joint MLL objective and gradient over [weights, log ell, log s2, log noise]."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = x.shape[0]
    p = feature_spec.n_params
    priors = priors if priors is not None else GpPriorConfig()
    eye = np.eye(n)

    def value_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        w = theta[:p]
        log_ell, log_s2, log_noise = theta[p], theta[p + 1], theta[p + 2]
        ell, s2, noise = math.exp(log_ell), math.exp(log_s2), math.exp(log_noise)

        raw = mlp_mod.mlp_forward(feature_spec, w, x)
        z = mlp_mod._act(feature_spec, raw)
        r = np.sqrt(_sqdists(z / ell, z / ell))
        kf = s2 * _matern_shape(r)
        L, _ = cholesky(kf + noise * eye, symmetry_check=False)
        alpha = tri_solve(L, tri_solve(L, y), transposed=True)
        mll = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)

        s_mat = 0.5 * (np.outer(alpha, alpha) - chol_inverse(L))

        grad = np.empty_like(theta)
        # Kernel-matrix cotangent pushed to the feature coordinates.
        t = s_mat * (s2 * _matern_dshape_over_r(r)) / (ell * ell)
        dz = 2.0 * (t.sum(axis=1)[:, None] * z - t @ z)
        draw = dz * mlp_mod._act_grad(feature_spec, raw, z)
        grad[:p] = mlp_mod.vjp_params(feature_spec, w, x, draw)
        grad[p] = np.sum(s_mat * (s2 * _matern_dshape_dlog_ell(r)))
        grad[p + 1] = np.sum(s_mat * kf)
        grad[p + 2] = noise * np.trace(s_mat)

        value = float(mll)
        if priors.enabled:
            pv, pg = _log_prior_and_grad(log_ell, priors.lengthscale_gamma)
            value += pv
            grad[p] += pg
            pv, pg = _log_prior_and_grad(log_s2, priors.outputscale_gamma)
            value += pv
            grad[p + 1] += pg
        return value, grad

    return value_and_grad


def dkl_fit(
    arch: MlpSpec,
    x,
    y,
    cfg: DklConfig | None = None,
    rng: Rng | None = None,
    priors: GpPriorConfig | None = None,
) -> DklState:
    """Jointly maximize the feature-space Matern MLL over weights and hyperparameters."""
    cfg = cfg if cfg is not None else DklConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()

    fspec = feature_spec_from(arch)
    w0 = mlp_mod.mlp_init(fspec, rng)
    priors = priors if priors is not None else GpPriorConfig()
    y_var = float(np.var(y)) if x.shape[0] > 1 else 1.0
    phi0 = _draw_matern_init(rng, priors, 1, y_var)

    objective = dkl_objective(fspec, x, y, priors)
    from .optim import adam_ascend

    if cfg.warmup_iterations > 0:
        z0 = featurize(fspec, w0, x)
        hyper_obj = matern_objective(z0, y, priors)
        warm = adam_ascend(hyper_obj, phi0, lr=0.05, iterations=cfg.warmup_iterations)
        if np.all(np.isfinite(warm.x)):
            phi0 = warm.x

    theta0 = np.concatenate([w0, phi0])
    res = adam_ascend(objective, theta0, lr=cfg.learning_rate, iterations=cfg.iterations)
    if not np.isfinite(res.value):
        raise FitFailed("deep kernel fit produced no finite objective")

    p = fspec.n_params
    w = res.x[:p]
    hypers = Matern52Hypers(
        lengthscale=math.exp(res.x[p]),
        outputscale=math.exp(res.x[p + 1]),
        likelihood_variance=math.exp(res.x[p + 2]),
    )
    z = featurize(fspec, w, x)
    kernel = MaternKernel(hypers)
    L, alpha, jitter = _condition(kernel, z, y, hypers.likelihood_variance)
    gp_state = GpState(kernel, z, y, hypers.likelihood_variance, L, alpha, {"jitter": jitter})
    gp_state.diagnostics["mll"] = gp_mll(gp_state)
    return DklState(fspec, w, gp_state, {"objective": res.value, "opt_iters": res.n_iters})
