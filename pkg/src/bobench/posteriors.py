"""Approximate-inference engines over MLP weights.

Four routes to a posterior-predictive sampler: full-batch HMC (the accuracy
reference), SGHMC (minibatch, no Metropolis correction), deep ensembles
(independent MAP fits on data subsets), and the linearized Laplace
approximation (a GP built from the network's parameter Jacobians at the MAP).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mlp as mlp_mod
from .errors import AllDiverged, FitFailed, NonFiniteLoss, NonFiniteState
from .mlp import MlpSpec
from .numkit import Rng, cholesky, tri_solve
from .optim import adam_ascend, lbfgs_polish

DIVERGENCE_THRESHOLD = 1000.0

# Dual-averaging constants (standard choices from the MCMC literature).
DA_GAMMA = 0.05
DA_T0 = 10.0
DA_KAPPA = 0.75


@dataclass
class HmcConfig:
    leapfrog_steps: int = 50
    target_accept: float = 0.75
    burn_in: int = 200
    kept_samples: int = 100
    thinning: int = 2
    init_step_size: float = 0.01
    # Draw the per-iteration step count uniformly from [1, leapfrog_steps];
    # fixed-length trajectories resonate with near-Gaussian targets and can
    # collapse the effective sample size.
    jitter_steps: bool = True


@dataclass
class SghmcConfig:
    minibatch_size: int = 5
    step_size: float | None = None  # None: 2e-6 * n; see sghmc_sample
    friction: float = 0.05
    iterations: int = 5000
    burn_in: int = 2000
    kept_samples: int = 100


@dataclass
class EnsembleConfig:
    n_models: int = 10
    subset_fraction: float = 0.8
    iterations: int = 1000
    learning_rate: float = 1e-2


@dataclass
class LlaConfig:
    iterations: int = 1000
    learning_rate: float = 1e-2
    # L-BFGS refinement after Adam; the Laplace predictive is only exact at a
    # true stationary point, which constant-rate Adam does not reach.
    polish: bool = True


@dataclass
class WeightPosterior:
    """Weight samples (HMC/SGHMC chains or ensemble members) plus diagnostics."""

    spec: MlpSpec
    samples: np.ndarray  # (M, P)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[1] != self.spec.n_params:
            raise ValueError("sample matrix does not match the spec's parameter count")


def _neg_log_joint(spec: MlpSpec, x, y):
    """U(theta) = -log joint and its gradient; overflow maps to +inf potential."""

    def u_and_grad(theta):
        try:
            value, grad = mlp_mod.log_joint_and_grad(spec, theta, x, y)
        except NonFiniteLoss:
            return np.inf, np.zeros_like(theta)
        return -value, -grad

    return u_and_grad


def leapfrog(theta, momentum, step_size, n_steps, u_and_grad):
    """Standard leapfrog integration; returns (theta, momentum, final (U, gradU))."""
    u, g = u_and_grad(theta)
    if not math.isfinite(u):
        return theta, momentum, (np.inf, g)
    p = momentum - 0.5 * step_size * g
    q = theta.copy()
    for step in range(n_steps):
        q = q + step_size * p
        u, g = u_and_grad(q)
        if not math.isfinite(u):
            return q, p, (np.inf, g)
        if step < n_steps - 1:
            p = p - step_size * g
    p = p - 0.5 * step_size * g
    return q, p, (u, g)


def hmc_sample(spec: MlpSpec, x, y, cfg: HmcConfig | None = None, rng: Rng | None = None) -> WeightPosterior:
    """Full-batch HMC with dual-averaging step-size adaptation during burn-in.

    Proposals with non-finite or > DIVERGENCE_THRESHOLD energy error are
    rejected and counted as divergences; the step size is frozen after
    burn-in. Raises AllDiverged when more than 90% of post-burn-in proposals
    diverge, which signals a hopeless step size or a pathological model.
    """
    cfg = cfg if cfg is not None else HmcConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(x.shape[0], spec.output_dim)
    u_and_grad = _neg_log_joint(spec, x, y)

    theta = mlp_mod.mlp_init(spec, rng)
    u_cur, _ = u_and_grad(theta)
    if not math.isfinite(u_cur):
        raise FitFailed("initial network state is non-finite")

    eps = cfg.init_step_size
    mu = math.log(10.0 * eps)
    h_bar = 0.0
    log_eps_bar = 0.0

    n_post = cfg.kept_samples * cfg.thinning
    total = cfg.burn_in + n_post
    kept = []
    accepts = 0
    divergences = 0
    accept_probs = []

    for t in range(1, total + 1):
        n_steps = int(rng.integers(1, cfg.leapfrog_steps + 1)) if cfg.jitter_steps else cfg.leapfrog_steps
        momentum = rng.standard_normal(theta.shape[0])
        h0 = u_cur + 0.5 * momentum @ momentum
        q, p, (u_new, _) = leapfrog(theta, momentum, eps, n_steps, u_and_grad)
        h1 = u_new + 0.5 * p @ p if math.isfinite(u_new) else np.inf
        delta_h = h0 - h1
        divergent = not math.isfinite(delta_h) or abs(delta_h) > DIVERGENCE_THRESHOLD
        alpha = 0.0 if divergent else min(1.0, math.exp(min(delta_h, 0.0)))

        accepted = (not divergent) and (rng.uniform() < alpha)
        if accepted:
            theta = q
            u_cur = u_new

        if t <= cfg.burn_in:
            frac = 1.0 / (t + DA_T0)
            h_bar = (1.0 - frac) * h_bar + frac * (cfg.target_accept - alpha)
            log_eps = mu - math.sqrt(t) / DA_GAMMA * h_bar
            eta = t ** (-DA_KAPPA)
            log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar
            eps = math.exp(log_eps)
            if t == cfg.burn_in:
                eps = math.exp(log_eps_bar)
        else:
            accepts += int(accepted)
            divergences += int(divergent)
            accept_probs.append(alpha)
            if (t - cfg.burn_in) % cfg.thinning == 0:
                kept.append(theta.copy())

    if n_post > 0 and divergences > 0.9 * n_post:
        raise AllDiverged(f"{divergences}/{n_post} post-burn-in proposals diverged")

    diag = {
        "accept_rate": accepts / max(n_post, 1),
        "mean_accept_prob": float(np.mean(accept_probs)) if accept_probs else 0.0,
        "divergences": divergences,
        "step_size": eps,
    }
    return WeightPosterior(spec, np.array(kept), diag)


def sghmc_sample(spec: MlpSpec, x, y, cfg: SghmcConfig | None = None, rng: Rng | None = None) -> WeightPosterior:
    """SGHMC: momentum update with friction and injected noise, no MH correction.

    v <- (1 - a) v - eta grad(U~) + N(0, 2 a eta I); theta <- theta + v, where
    U~ uses a minibatch gradient rescaled by n/batch.
    """
    cfg = cfg if cfg is not None else SghmcConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(x.shape[0], spec.output_dim)
    n = x.shape[0]
    b = min(cfg.minibatch_size, n)
    if b < 1:
        raise ValueError("minibatch_size must be >= 1")
    # Uncompensated minibatch-gradient noise inflates the stationary variance
    # roughly by 1 + eta * Var(grad) / (2 * friction); this scale keeps the
    # inflation within tens of percent on conjugate checks.
    eta = cfg.step_size if cfg.step_size is not None else 2e-6 * n
    alpha = cfg.friction
    noise_scale = math.sqrt(2.0 * alpha * eta)
    scale = n / b

    theta = mlp_mod.mlp_init(spec, rng)
    v = np.zeros_like(theta)
    n_post = cfg.iterations - cfg.burn_in
    thin = max(1, n_post // cfg.kept_samples) if n_post > 0 else 1
    kept = []

    for t in range(1, cfg.iterations + 1):
        idx = rng.choice(n, size=b, replace=False)
        try:
            _, grad = mlp_mod.log_joint_and_grad(
                spec, theta, x[idx], y[idx], weights=np.full(b, scale)
            )
        except NonFiniteLoss as exc:
            raise NonFiniteState(f"chain aborted at iteration {t}") from exc
        v = (1.0 - alpha) * v + eta * grad + noise_scale * rng.standard_normal(theta.shape[0])
        theta = theta + v
        if not np.all(np.isfinite(theta)):
            raise NonFiniteState(f"chain aborted at iteration {t}")
        if t > cfg.burn_in and (t - cfg.burn_in) % thin == 0 and len(kept) < cfg.kept_samples:
            kept.append(theta.copy())

    if not kept:
        kept.append(theta.copy())
    return WeightPosterior(spec, np.array(kept), {"step_size": eta, "thinning": thin})


def map_fit(
    spec: MlpSpec,
    x,
    y,
    iterations: int = 1000,
    learning_rate: float = 1e-2,
    rng: Rng | None = None,
    polish: bool = False,
) -> tuple[np.ndarray, float]:
    """Maximize the log joint from a fresh prior-draw initialization."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(x.shape[0], spec.output_dim)

    def objective(theta):
        try:
            return mlp_mod.log_joint_and_grad(spec, theta, x, y)
        except NonFiniteLoss:
            return -np.inf, np.zeros_like(theta)

    theta0 = mlp_mod.mlp_init(spec, rng)
    res = adam_ascend(objective, theta0, lr=learning_rate, iterations=iterations)
    if not math.isfinite(res.value):
        raise FitFailed("MAP fit never reached a finite log joint")
    theta = res.x
    if polish:
        theta = lbfgs_polish(objective, theta)
    value, _ = objective(theta)
    return theta, float(value)


def ensemble_fit(spec: MlpSpec, x, y, cfg: EnsembleConfig | None = None, rng: Rng | None = None) -> WeightPosterior:
    """Independent MAP fits, each on a random subset from a fresh prior init."""
    cfg = cfg if cfg is not None else EnsembleConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(x.shape[0], spec.output_dim)
    n = x.shape[0]
    if not 0.0 < cfg.subset_fraction <= 1.0:
        raise ValueError("subset_fraction must lie in (0, 1]")
    size = max(1, math.ceil(cfg.subset_fraction * n))

    members = []
    failures = 0
    for _ in range(cfg.n_models):
        idx = rng.choice(n, size=size, replace=False) if size < n else np.arange(n)
        try:
            theta, _ = map_fit(
                spec, x[idx], y[idx],
                iterations=cfg.iterations, learning_rate=cfg.learning_rate, rng=rng,
            )
            members.append(theta)
        except FitFailed:
            failures += 1
    if len(members) < min(2, cfg.n_models):
        raise FitFailed(f"only {len(members)} of {cfg.n_models} ensemble members trained")
    return WeightPosterior(spec, np.array(members), {"failures": failures, "subset_size": size})


def predictive_draws(
    posterior: WeightPosterior,
    xq,
    count: int,
    include_noise: bool = False,
    rng: Rng | None = None,
) -> np.ndarray:
    """count x q x m tensor; each draw evaluates one uniformly chosen weight sample.

    Acquisition consumes latent-f draws (include_noise=False); noisy draws are
    for calibration diagnostics only.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    xq = np.atleast_2d(np.asarray(xq, dtype=float))
    m_samples = posterior.samples.shape[0]
    idx = rng.choice(m_samples, size=count, replace=count > m_samples)
    uniq, inverse = np.unique(idx, return_inverse=True)
    outs = np.stack(
        [mlp_mod.mlp_forward(posterior.spec, posterior.samples[i], xq) for i in uniq]
    )
    draws = outs[inverse]
    if include_noise:
        draws = draws + rng.standard_normal(draws.shape) * math.sqrt(
            posterior.spec.likelihood_variance
        )
    return draws


# ---------------------------------------------------------------------------
# Linearized Laplace
# ---------------------------------------------------------------------------


class LlaHead:
    """GP predictive for one output: tangent-kernel covariance at the MAP.

    Mean is the MAP prediction; covariance is the prior tangent kernel
    s2_prior J(x) J(x')^T conditioned on the training points with noise s2.
    Kernel entries come from per-example Jacobian rows, so nothing of size
    P x P is ever materialized.
    """

    def __init__(self, spec: MlpSpec, theta_map: np.ndarray, x_train: np.ndarray, objective: int):
        self.spec = spec
        self.theta_map = theta_map
        self.x_train = x_train
        self.objective = objective
        sp2 = spec.prior_variance
        self.grads = mlp_mod.output_grads(spec, theta_map, x_train, objective)  # n x P
        k_train = sp2 * (self.grads @ self.grads.T)
        self.chol, self.jitter = cholesky(
            k_train + spec.likelihood_variance * np.eye(x_train.shape[0])
        )

    def _cross(self, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        sp2 = self.spec.prior_variance
        gq = mlp_mod.output_grads(self.spec, self.theta_map, xq, self.objective)
        cross = sp2 * (gq @ self.grads.T)
        prior_diag = sp2 * np.sum(gq * gq, axis=1)
        return gq, cross, prior_diag

    def predict(self, xq) -> tuple[np.ndarray, np.ndarray]:
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        mean = mlp_mod.mlp_forward(self.spec, self.theta_map, xq)[:, self.objective]
        gq, cross, _ = self._cross(xq)
        sp2 = self.spec.prior_variance
        v = tri_solve(self.chol, cross.T)
        cov = sp2 * (gq @ gq.T) - v.T @ v
        return mean, 0.5 * (cov + cov.T)

    def predict_marginal(self, xq) -> tuple[np.ndarray, np.ndarray]:
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        mean = mlp_mod.mlp_forward(self.spec, self.theta_map, xq)[:, self.objective]
        var = np.empty(xq.shape[0])
        chunk = max(1, int(3e7 // max(self.spec.n_params, 1)))
        for lo in range(0, xq.shape[0], chunk):
            sub = xq[lo : lo + chunk]
            _, cross, prior_diag = self._cross(sub)
            v = tri_solve(self.chol, cross.T)
            var[lo : lo + len(sub)] = prior_diag - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def conditioning_context(self, x_sel) -> "_LlaConditioningContext":
        return _LlaConditioningContext(self, np.atleast_2d(np.asarray(x_sel, dtype=float)))


class _LlaConditioningContext:
    """Selected-block tangent-kernel quantities cached for repeated pool queries."""

    def __init__(self, head: LlaHead, x_sel: np.ndarray):
        self.head = head
        self.x_sel = x_sel
        sp2 = head.spec.prior_variance
        if x_sel.shape[0]:
            self.g_sel = mlp_mod.output_grads(head.spec, head.theta_map, x_sel, head.objective)
            self.v_sel = tri_solve(head.chol, (sp2 * (self.g_sel @ head.grads.T)).T)
            self.mean_sel, self.cov_sel = head.predict(x_sel)
        else:
            self.g_sel = np.empty((0, head.spec.n_params))
            self.v_sel = np.empty((head.x_train.shape[0], 0))
            self.mean_sel = np.empty(0)
            self.cov_sel = np.empty((0, 0))

    def pool_blocks(self, x_pool: np.ndarray):
        head = self.head
        sp2 = head.spec.prior_variance
        j = self.x_sel.shape[0]
        n_pool = x_pool.shape[0]
        mean_pool = mlp_mod.mlp_forward(head.spec, head.theta_map, x_pool)[:, head.objective]
        cross = np.empty((n_pool, j))
        var_pool = np.empty(n_pool)
        chunk = max(1, int(3e7 // max(head.spec.n_params, 1)))
        for lo in range(0, n_pool, chunk):
            sub = x_pool[lo : lo + chunk]
            gq, train_cross, prior_diag = head._cross(sub)
            v = tri_solve(head.chol, train_cross.T)
            var_pool[lo : lo + len(sub)] = prior_diag - np.sum(v * v, axis=0)
            if j:
                cross[lo : lo + len(sub)] = sp2 * (gq @ self.g_sel.T) - v.T @ self.v_sel
        return mean_pool, cross, np.maximum(var_pool, 0.0)


@dataclass
class LlaState:
    spec: MlpSpec
    theta_map: np.ndarray
    heads: list[LlaHead]
    diagnostics: dict = field(default_factory=dict)


def lla_fit(spec: MlpSpec, x, y, cfg: LlaConfig | None = None, rng: Rng | None = None) -> LlaState:
    """MAP fit followed by per-objective tangent-kernel GP construction."""
    cfg = cfg if cfg is not None else LlaConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(x.shape[0], spec.output_dim)
    theta_map, value = map_fit(
        spec, x, y, iterations=cfg.iterations, learning_rate=cfg.learning_rate,
        rng=rng, polish=cfg.polish,
    )
    heads = [LlaHead(spec, theta_map, x, k) for k in range(spec.output_dim)]
    return LlaState(spec, theta_map, heads, {"map_log_joint": value,
                                             "jitter": max(h.jitter for h in heads)})
