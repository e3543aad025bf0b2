"""Adaptive-moment gradient ascent used by the MAP and hyperparameter trainers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AscendResult:
    x: np.ndarray
    value: float
    n_iters: int
    grad_norm: float
    converged: bool


def adam_ascend(
    value_and_grad,
    x0: np.ndarray,
    lr: float = 1e-2,
    iterations: int = 1000,
    grad_tol: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AscendResult:
    """Maximize a differentiable objective; returns the best iterate seen.

    ``value_and_grad(x) -> (value, grad)``. A non-finite evaluation stops the
    run and the best finite iterate so far is returned (value -inf if none).
    """
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x = x.copy()
    best_val = -np.inf
    gnorm = np.inf
    t = 0
    converged = False
    for t in range(1, iterations + 1):
        try:
            val, g = value_and_grad(x)
        except FloatingPointError:
            break
        if not (np.isfinite(val) and np.all(np.isfinite(g))):
            break
        if val > best_val:
            best_val = float(val)
            best_x = x.copy()
        gnorm = float(np.max(np.abs(g)))
        if grad_tol and gnorm < grad_tol:
            converged = True
            break
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        x = x + lr * mhat / (np.sqrt(vhat) + eps)
    return AscendResult(best_x, best_val, t, gnorm, converged)


def lbfgs_polish(value_and_grad, x0: np.ndarray, max_iter: int = 500) -> np.ndarray:
    """Drive the ascent to a stationary point with L-BFGS; falls back to x0 on failure."""
    from scipy.optimize import minimize

    def neg(x):
        val, g = value_and_grad(x)
        if not (np.isfinite(val) and np.all(np.isfinite(g))):
            return np.inf, np.zeros_like(x)
        return -val, -g

    try:
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", options={"maxiter": max_iter})
    except Exception:
        return np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(res.x)):
        return np.asarray(x0, dtype=float)
    base_val, _ = value_and_grad(np.asarray(x0, dtype=float))
    new_val, _ = value_and_grad(res.x)
    return res.x if new_val >= base_val else np.asarray(x0, dtype=float)
