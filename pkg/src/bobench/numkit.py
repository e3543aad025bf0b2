"""Dense linear algebra, random and quasi-random sampling, and finite differences.

All arrays are float64 numpy arrays. All randomness flows through explicitly
passed ``numpy.random.Generator`` handles; nothing in the package touches the
global numpy RNG.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
import scipy.linalg
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import (
    DimTooLarge,
    DomainError,
    NonFiniteEvaluation,
    NotPositiveDefinite,
    SingularTriangular,
)

Rng = np.random.Generator

# Largest dimension covered by scipy's Joe-Kuo direction-number tables.
SOBOL_MAX_DIM = int(qmc.Sobol.MAXDIM)

JITTER_START_FRAC = 1e-8
JITTER_CAP_FRAC = 1e-2
JITTER_GROWTH = 10.0


def rng_from_seed(seed) -> Rng:
    """Create a generator from an int seed or a SeedSequence."""
    return np.random.default_rng(seed)


def trial_rng(master_seed: int, trial_index: int) -> Rng:
    """Deterministic per-trial stream derived from (master seed, trial index)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial_index)]))


def split_rng(rng: Rng, n: int) -> list[Rng]:
    """Split off n independent child streams."""
    return list(rng.spawn(n))


def derive_seed(rng: Rng) -> int:
    """Draw a 63-bit integer usable as a seed for a downstream sampler."""
    return int(rng.integers(0, 2**63 - 1))


def cholesky(
    a: np.ndarray, jitter: float = 0.0, symmetry_check: bool = True
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``a + jitter*I`` with geometric jitter escalation.

    The first attempt uses exactly ``jitter`` (zero allowed). On failure the
    jitter starts at ``1e-8 * mean(diag)`` and grows tenfold per attempt up to
    ``1e-2 * mean(diag)``; kernel matrices at duplicate query points are
    near-singular by construction, so escalation is routine rather than
    exceptional. Hot loops that build symmetric matrices by construction may
    pass ``symmetry_check=False``.

    Returns ``(L, used_jitter)``.

    Raises
    ------
    NotPositiveDefinite
        If factorization still fails at the jitter cap.
    ValueError
        If ``a`` is not square-symmetric to within 1e-10 relative.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if symmetry_check:
        scale = np.max(np.abs(a)) if a.size else 0.0
        if scale > 0 and np.max(np.abs(a - a.T)) > 1e-10 * scale:
            raise ValueError("matrix is not symmetric to within 1e-10 relative")

    n = a.shape[0]
    mean_diag = float(np.mean(np.abs(np.diag(a)))) if n else 0.0
    cap = JITTER_CAP_FRAC * mean_diag
    eye = np.eye(n)

    current = float(jitter)
    while True:
        try:
            L = np.linalg.cholesky(a + current * eye if current else a)
            return L, current
        except np.linalg.LinAlgError:
            pass
        nxt = JITTER_START_FRAC * mean_diag if current == 0.0 else current * JITTER_GROWTH
        if nxt <= current:
            nxt = current * JITTER_GROWTH if current else np.finfo(float).tiny
        if nxt > cap or nxt == 0.0:
            raise NotPositiveDefinite(
                f"cholesky failed at jitter cap {cap:.3e} (mean diag {mean_diag:.3e})"
            )
        current = nxt


def tri_solve(L: np.ndarray, b: np.ndarray, transposed: bool = False) -> np.ndarray:
    """Solve ``L x = b`` (or ``L^T x = b``) for lower-triangular L.

    Raises SingularTriangular on a zero diagonal entry.
    """
    L = np.asarray(L, dtype=float)
    if np.any(np.diag(L) == 0.0):
        raise SingularTriangular("zero diagonal entry in triangular factor")
    return scipy.linalg.solve_triangular(L, b, lower=True, trans=1 if transposed else 0)


def chol_inverse(L: np.ndarray) -> np.ndarray:
    """Full inverse of A = L L^T from its lower Cholesky factor (LAPACK dpotri)."""
    inv, info = scipy.linalg.lapack.dpotri(L, lower=1)
    if info != 0:
        raise SingularTriangular(f"dpotri failed with info {info}")
    return inv + np.tril(inv, -1).T


def mvn_sample(mean: np.ndarray, chol_l: np.ndarray, count: int, rng: Rng) -> np.ndarray:
    """Draw ``count`` samples of N(mean, L L^T) as rows: mean + z @ L^T."""
    mean = np.asarray(mean, dtype=float)
    z = rng.standard_normal((count, mean.shape[0]))
    return mean[None, :] + z @ np.asarray(chol_l, dtype=float).T


def sobol_points(
    dim: int, count: int, seed: int = 0, allow_fallback: bool = True
) -> np.ndarray:
    """Low-discrepancy point set in [0, 1]^dim.

    ``seed == 0`` yields the deterministic unscrambled sequence with the
    initial all-zero point skipped; any other seed applies Owen digital
    scrambling keyed by that seed. Dimensions beyond the direction-number
    table are filled with a seeded Latin hypercube when ``allow_fallback``,
    otherwise DimTooLarge is raised.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return np.empty((0, dim))

    if dim > SOBOL_MAX_DIM:
        if not allow_fallback:
            raise DimTooLarge(f"dim {dim} exceeds the {SOBOL_MAX_DIM}-dim direction-number table")
        head = sobol_points(SOBOL_MAX_DIM, count, seed=seed)
        lhs = qmc.LatinHypercube(d=dim - SOBOL_MAX_DIM, seed=seed + 1)
        return np.hstack([head, lhs.random(count)])

    with warnings.catch_warnings():
        # scipy warns when count is not a power of two; callers use arbitrary counts.
        warnings.simplefilter("ignore", UserWarning)
        if seed == 0:
            gen = qmc.Sobol(d=dim, scramble=False)
            gen.fast_forward(1)
        else:
            gen = qmc.Sobol(d=dim, scramble=True, seed=seed)
        return gen.random(count)


def sobol_uses_fallback(dim: int) -> bool:
    """True when sobol_points pads this dimension with the Latin-hypercube fallback."""
    return dim > SOBOL_MAX_DIM


def sobol_normal(dim: int, count: int, seed: int) -> np.ndarray:
    """Standard-normal quasi-random draws via the inverse CDF of scrambled Sobol points."""
    u = sobol_points(dim, count, seed=seed if seed != 0 else 1)
    tiny = np.finfo(float).tiny
    return ndtri(np.clip(u, tiny, 1.0 - 1e-16))


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Raises NonFiniteEvaluation if any probe evaluates non-finite.
    """
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteEvaluation(f"non-finite evaluation near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    """log density of Gamma(shape, rate) at x: a ln b - ln G(a) + (a-1) ln x - b x."""
    if shape <= 0 or rate <= 0:
        raise DomainError("gamma shape and rate must be positive")
    if x <= 0:
        raise DomainError("gamma density evaluated at non-positive x")
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x
