"""Monte-Carlo acquisition functions and their maximizer.

Everything here works on raw objective values under the maximization
convention. Batch selection is greedy: one point at a time, scored by joint
Monte-Carlo draws that share a fixed base sample across all candidates, so
the acquisition surface is deterministic and local refinement is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkit import Rng, derive_seed, sobol_points
from .surrogates import FittedSurrogate, FixedSampler

HV_MAX_OBJECTIVES = 4
HV_MAX_FRONT = 200
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
GOLDEN_EVALS = 12


@dataclass
class AcqConfig:
    mc_draws: int = 128
    candidate_pool: int = 1024
    refine_starts: int = 10
    refine_iters: int = 50
    batch_q: int = 1


@dataclass
class ParetoState:
    """Mutually nondominated raw objective vectors, all strictly above the reference."""

    front: np.ndarray  # (k, m)
    ref: np.ndarray  # (m,)

    def __post_init__(self):
        self.front = np.atleast_2d(np.asarray(self.front, dtype=float))
        self.ref = np.asarray(self.ref, dtype=float)
        if self.front.size == 0:
            self.front = self.front.reshape(0, self.ref.shape[0])


def _nondominated_mask(y: np.ndarray) -> np.ndarray:
    n = y.shape[0]
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if not keep[i]:
            continue
        ge = np.all(y >= y[i], axis=1)
        gt = np.any(y > y[i], axis=1)
        dominated_by = ge & gt
        dominated_by[i] = False
        if np.any(dominated_by & keep):
            keep[i] = False
    return keep


def pareto_front(y: np.ndarray, ref) -> ParetoState:
    """Maximal nondominated subset, filtered to points strictly dominating ref."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    ref = np.asarray(ref, dtype=float)
    if y.shape[1] < 2:
        raise ValueError("pareto_front needs at least two objectives")
    above = np.all(y > ref, axis=1)
    y = y[above]
    if y.shape[0] == 0:
        return ParetoState(np.empty((0, ref.shape[0])), ref)
    return ParetoState(y[_nondominated_mask(y)], ref)


def qei(draws: np.ndarray, incumbent: float) -> float:
    """Batch MC expected improvement: mean over draws of the best positive excess."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 3:
        if draws.shape[2] != 1:
            raise ValueError("qei is a single-objective acquisition")
        draws = draws[:, :, 0]
    best = draws.max(axis=1)
    return float(np.mean(np.maximum(best - incumbent, 0.0)))


def _hv2d(points: np.ndarray, ref: np.ndarray) -> float:
    order = np.argsort(points[:, 1], kind="stable")
    pts = points[order]
    hv = 0.0
    prev_y = ref[1]
    for x, yv in pts:
        hv += (x - ref[0]) * (yv - prev_y)
        prev_y = yv
    return hv


def _wfg(points: list[np.ndarray], ref: np.ndarray) -> float:
    if not points:
        return 0.0
    total = 0.0
    for i, p in enumerate(points):
        rest = points[i + 1 :]
        limited = [np.minimum(q, p) for q in rest]
        if limited:
            arr = np.array(limited)
            arr = arr[np.all(arr > ref, axis=1)]
            if arr.shape[0]:
                arr = arr[_nondominated_mask(arr)]
            limited = list(arr)
        incl = float(np.prod(p - ref))
        total += incl - _wfg(limited, ref)
    return total


def wfg_hypervolume(points: np.ndarray, ref: np.ndarray) -> float:
    """Exclusive-volume recursion; exact for any objective count."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        return 0.0
    order = np.argsort(-points[:, 0], kind="stable")
    return _wfg(list(points[order]), np.asarray(ref, dtype=float))


def hypervolume(state: ParetoState) -> float:
    """Lebesgue measure of the union of boxes [ref, p] over the front."""
    pts, ref = state.front, state.ref
    m = ref.shape[0]
    if m > HV_MAX_OBJECTIVES:
        raise ValueError(f"hypervolume supports at most {HV_MAX_OBJECTIVES} objectives")
    if pts.shape[0] > HV_MAX_FRONT:
        raise ValueError(f"hypervolume supports fronts up to {HV_MAX_FRONT} points")
    if pts.shape[0] == 0:
        return 0.0
    if np.any(pts <= ref):
        pts = pts[np.all(pts > ref, axis=1)]
        if pts.shape[0] == 0:
            return 0.0
    if m == 2:
        keep = _nondominated_mask(pts)
        return _hv2d(pts[keep], ref)
    return wfg_hypervolume(pts, ref)


def mc_hvi(draws: np.ndarray, state: ParetoState) -> float:
    """MC hypervolume improvement by direct recomputation per joint draw."""
    draws = np.asarray(draws, dtype=float)
    base = hypervolume(state)
    total = 0.0
    for s in range(draws.shape[0]):
        combined = np.vstack([state.front, draws[s]]) if state.front.size else draws[s]
        total += hypervolume(pareto_front(combined, state.ref)) - base
    return total / draws.shape[0]


class _Staircase2d:
    """Prefix-sum form of a 2-d maximization front for vectorized one-point HVI.

    Segment t covers heights [B[t], B[t+1]) (the last one is unbounded) and
    within it the staircase extends to C[t] along the first objective, with
    C descending. The exclusive volume a new point (a, b) adds is the integral
    of max(0, a - C) over heights in [ref2, b].
    """

    def __init__(self, points: np.ndarray, ref: np.ndarray):
        self.ref = ref
        pts = points[np.all(points > ref, axis=1)] if points.size else points.reshape(0, 2)
        if pts.shape[0]:
            pts = pts[_nondominated_mask(pts)]
            pts = pts[np.argsort(pts[:, 1], kind="stable")]  # f2 asc => f1 desc
            self.bounds = np.concatenate([[ref[1]], pts[:, 1]])  # B, length k+1
            self.cover = np.concatenate([pts[:, 0], [ref[0]]])  # C, length k+1
        else:
            self.bounds = np.array([ref[1]])
            self.cover = np.array([ref[0]])
        widths = np.diff(self.bounds)
        self.prefix_area = np.concatenate([[0.0], np.cumsum(widths * self.cover[:-1])])

    def hvi(self, pts: np.ndarray) -> np.ndarray:
        a = pts[..., 0]
        b = pts[..., 1]
        k1 = len(self.cover)  # k + 1 segments
        t_b = np.clip(np.searchsorted(self.bounds, b, side="right") - 1, 0, k1 - 1)
        count_less = np.searchsorted(self.cover[::-1], a, side="left")
        t_a = k1 - count_less  # first segment with coverage < a
        valid = (a > self.ref[0]) & (b > self.ref[1]) & (t_a <= t_b)
        t_a_c = np.minimum(t_a, k1 - 1)
        full = a * (self.bounds[t_b] - self.bounds[t_a_c]) - (
            self.prefix_area[t_b] - self.prefix_area[t_a_c]
        )
        tail = (b - self.bounds[t_b]) * (a - self.cover[t_b])
        return np.where(valid, full + tail, 0.0)


def hvi_scores(
    draws_sel: np.ndarray, draws_cand: np.ndarray, state: ParetoState
) -> np.ndarray:
    """Per-candidate MC hypervolume improvement given the selected batch draws.

    Score(c) = mean_s [ HV(front U B_s U {c_s}) - HV(front) ]; the 2-objective
    path merges front and batch draws into one staircase per sample and scores
    every candidate against it in vectorized form.
    """
    S, n_pool, m = draws_cand.shape
    base = hypervolume(state)
    scores = np.zeros(n_pool)
    if m == 2:
        for s in range(S):
            merged = (
                np.vstack([state.front, draws_sel[s]]) if draws_sel.shape[1] else state.front
            )
            stair = _Staircase2d(merged, state.ref)
            offset = hypervolume(pareto_front(merged, state.ref)) - base if draws_sel.shape[1] else 0.0
            scores += stair.hvi(draws_cand[s]) + offset
        return scores / S
    for s in range(S):
        merged = np.vstack([state.front, draws_sel[s]]) if draws_sel.shape[1] else state.front
        merged_state = pareto_front(merged, state.ref) if merged.size else state
        for c in range(n_pool):
            combined = np.vstack([merged_state.front, draws_cand[s, c][None, :]])
            scores[c] += hypervolume(pareto_front(combined, state.ref)) - base
    return scores / S


def _ei_scores(draws_sel: np.ndarray, draws_cand: np.ndarray, incumbent: float) -> np.ndarray:
    best_sel = (
        draws_sel[:, :, 0].max(axis=1) if draws_sel.shape[1] else np.full(draws_sel.shape[0], -np.inf)
    )
    joint_best = np.maximum(best_sel[:, None], draws_cand[:, :, 0])
    return np.mean(np.maximum(joint_best - incumbent, 0.0), axis=0)


def optimize_acq(
    fitted: FittedSurrogate,
    cfg: AcqConfig,
    bounds: np.ndarray,
    rng: Rng,
    incumbent: float | None = None,
    front: ParetoState | None = None,
) -> np.ndarray:
    """Greedy sequential batch maximization of qEI (single) or MC HVI (multi).

    Per batch slot: a fresh Sobol pool is scored under fixed base draws, the
    top scorers are refined by coordinate-wise golden-section search on the
    same fixed-draw objective, and the best refined point joins the batch.
    Ties keep pool order, so a flat acquisition still returns a valid point.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    d = bounds.shape[0]
    if (incumbent is None) == (front is None):
        raise ValueError("pass exactly one of incumbent (single) or front (multi)")
    sampler = fitted.fixed_sampler(cfg.mc_draws, cfg.batch_q, rng)

    def score(x_sel: np.ndarray, x_cand: np.ndarray) -> np.ndarray:
        d_sel, d_cand = sampler.sel_and_candidate_draws(x_sel, x_cand)
        if front is None:
            return _ei_scores(d_sel, d_cand, incumbent)
        return hvi_scores(d_sel, d_cand, front)

    selected = np.empty((0, d))
    span = bounds[:, 1] - bounds[:, 0]
    for _ in range(cfg.batch_q):
        pool = bounds[:, 0] + sobol_points(d, cfg.candidate_pool, seed=derive_seed(rng)) * span
        pool_scores = score(selected, pool)
        order = np.argsort(-pool_scores, kind="stable")
        n_starts = min(cfg.refine_starts, len(order))
        pts = pool[order[:n_starts]].copy()
        best_scores = pool_scores[order[:n_starts]].copy()
        for it in range(cfg.refine_iters):
            coord = it % d
            pts, best_scores = _golden_pass(score, selected, pts, best_scores, bounds, coord)
        winner = int(np.argmax(best_scores))  # stable: first index wins ties
        selected = np.vstack([selected, pts[winner][None, :]])
    return selected


def _golden_pass(score, x_sel, pts, best_scores, bounds, coord):
    """One golden-section line search along `coord` for all starts in lockstep."""
    lo = np.full(len(pts), bounds[coord, 0])
    hi = np.full(len(pts), bounds[coord, 1])
    cand = pts.copy()
    for _ in range(GOLDEN_EVALS):
        x1 = hi - GOLDEN * (hi - lo)
        x2 = lo + GOLDEN * (hi - lo)
        probe = np.vstack([cand, cand])
        probe[: len(pts), coord] = x1
        probe[len(pts) :, coord] = x2
        vals = score(x_sel, probe)
        f1, f2 = vals[: len(pts)], vals[len(pts) :]
        take_low = f1 >= f2
        hi = np.where(take_low, x2, hi)
        lo = np.where(take_low, lo, x1)
        improved1 = f1 > best_scores
        best_scores = np.where(improved1, f1, best_scores)
        pts[improved1, coord] = x1[improved1]
        improved2 = f2 > best_scores
        best_scores = np.where(improved2, f2, best_scores)
        pts[improved2, coord] = x2[improved2]
    return pts, best_scores
