"""The optimization loop, experiment runner, and sensitivity sweeps.

A trial: draw Sobol initial points, then alternate surrogate fit ->
acquisition maximization -> objective evaluation until the budget is spent.
Each trial derives every random stream from (master seed, trial index), so
reruns are bit-reproducible and trials parallelize without shared state. A
surrogate fit failure never aborts a trial: that iteration falls back to a
random in-bounds batch and the record row is flagged.
"""

from __future__ import annotations

import csv
import json
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import surrogates as sur_mod
from .acquisition import AcqConfig, hypervolume, optimize_acq, pareto_front
from .errors import FitFailed
from .mlp import MlpSpec
from .numkit import derive_seed, sobol_points, sobol_uses_fallback, trial_rng
from .problems import Problem, make_problem
from .surrogates import Dataset, SurrogateConfig

SWEEP_QUERY_POINTS = (-4.5, -1.5, 1.5, 4.5)
SWEEP_BASE = {"likelihood_variance": 1.0, "prior_variance": 1.0, "depth": 3,
              "width": 128, "activation": "tanh"}
SWEEP_GRIDS = {
    "likelihood_variance": (0.1, 1.0, 10.0),
    "prior_variance": (0.1, 1.0, 10.0),
    "depth": (2, 3, 4, 5),
    "width": (64, 128, 256),
    "activation": ("tanh", "relu"),
}


@dataclass
class BoConfig:
    problem: str = "branin"
    problem_params: dict = field(default_factory=dict)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    acq: AcqConfig = field(default_factory=AcqConfig)
    n_init: int = 10
    batch: int = 5
    max_evals: int = 100
    trials: int = 5
    master_seed: int = 0
    threads: int = 1
    out_dir: str = "results"
    label: str = ""

    def __post_init__(self):
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.max_evals < self.n_init:
            raise ValueError("max_evals must be >= n_init")
        if not self.label:
            self.label = f"{self.problem}:{self.surrogate.kind}"


@dataclass
class TrialRecord:
    problem: str
    trial_index: int
    label: str
    rows: list = field(default_factory=list)

    def best_series(self) -> list[tuple[int, float]]:
        return [(r["evals"], r["best"]) for r in self.rows]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.rows)


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _progress_metric(problem: Problem, y_all: np.ndarray) -> float:
    if problem.num_objectives == 1:
        return float(y_all.max())
    return hypervolume(pareto_front(y_all, problem.ref_point))


def run_trial(cfg: BoConfig, trial_index: int) -> TrialRecord:
    """One full optimization trial; never evaluates the objective outside the budget."""
    problem = make_problem(cfg.problem, **cfg.problem_params)
    root = trial_rng(cfg.master_seed, trial_index)
    init_rng = root.spawn(1)[0]
    span = problem.bounds[:, 1] - problem.bounds[:, 0]

    x_all = problem.bounds[:, 0] + sobol_points(
        problem.dim, cfg.n_init, seed=derive_seed(init_rng)
    ) * span
    y_all = problem.evaluate(x_all)

    record = TrialRecord(problem.name, trial_index, cfg.label)
    record.rows.append(
        {
            "iteration": 0,
            "evals": int(x_all.shape[0]),
            "x": _sanitize(x_all),
            "y": _sanitize(y_all),
            "best": _progress_metric(problem, y_all),
            "fallback": False,
            "fit": {"note": "sobol initialization",
                    "sobol_fallback": sobol_uses_fallback(problem.dim)},
            "wall_seconds": 0.0,
        }
    )

    iteration = 0
    while x_all.shape[0] < cfg.max_evals:
        iteration += 1
        fit_rng, acq_rng, fallback_rng = root.spawn(3)
        q_eff = min(cfg.batch, cfg.max_evals - x_all.shape[0])
        t0 = time.perf_counter()
        fallback = False
        diagnostics: dict = {}
        try:
            fitted = sur_mod.fit(cfg.surrogate, Dataset(x_all, y_all, problem.bounds),
                                 fit_rng)
            diagnostics = _sanitize(fitted.diagnostics)
            acq_cfg = replace(cfg.acq, batch_q=q_eff)
            if problem.num_objectives == 1:
                batch = optimize_acq(fitted, acq_cfg, problem.bounds, acq_rng,
                                     incumbent=float(y_all.max()))
            else:
                front = pareto_front(y_all, problem.ref_point)
                batch = optimize_acq(fitted, acq_cfg, problem.bounds, acq_rng,
                                     front=front)
        except FitFailed as exc:
            fallback = True
            diagnostics = {"error": str(exc)}
            batch = problem.bounds[:, 0] + fallback_rng.uniform(
                size=(q_eff, problem.dim)
            ) * span

        y_batch = problem.evaluate(batch)
        x_all = np.vstack([x_all, batch])
        y_all = np.vstack([y_all, y_batch])
        record.rows.append(
            {
                "iteration": iteration,
                "evals": int(x_all.shape[0]),
                "x": _sanitize(batch),
                "y": _sanitize(y_batch),
                "best": _progress_metric(problem, y_all),
                "fallback": fallback,
                "fit": diagnostics,
                "wall_seconds": time.perf_counter() - t0,
            }
        )
    return record


def summarize(records: list[TrialRecord], label: str) -> list[dict]:
    """Mean and standard error of best-so-far per cumulative evaluation count."""
    series = [r.best_series() for r in records]
    checkpoints = sorted({e for s in series for e, _ in s})
    rows = []
    for evals in checkpoints:
        vals = []
        for s in series:
            eligible = [b for e, b in s if e <= evals]
            if eligible:
                vals.append(eligible[-1])
        arr = np.asarray(vals)
        stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        rows.append(
            {"evals": evals, "mean_best": float(arr.mean()), "stderr_best": stderr,
             "label": label}
        )
    return rows


def write_summary_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["evals", "mean_best", "stderr_best", "label"])
        for r in rows:
            writer.writerow([r["evals"], repr(r["mean_best"]), repr(r["stderr_best"]),
                             r["label"]])


def run_experiment(cfg: BoConfig, out_dir=None) -> dict:
    """All trials (optionally threaded), per-trial JSONL files, one summary CSV.

    Trial files are written as each trial completes, so an interrupt preserves
    partial results. ``wall_seconds`` is the single non-deterministic field in
    the JSONL rows; the summary CSV is byte-identical across reruns of the
    same (config, master seed).
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: dict[int, TrialRecord] = {}

    def run_one(k: int) -> TrialRecord:
        rec = run_trial(cfg, k)
        (out / f"trial_{k}.jsonl").write_text(rec.to_jsonl(), encoding="utf-8")
        return rec

    try:
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                for k, rec in zip(range(cfg.trials), pool.map(run_one, range(cfg.trials))):
                    records[k] = rec
        else:
            for k in range(cfg.trials):
                records[k] = run_one(k)
    finally:
        done = [records[k] for k in sorted(records)]
        summary = summarize(done, cfg.label) if done else []
        summary_path = out / "summary.csv"
        write_summary_csv(summary, summary_path)
    return {
        "summary": summary,
        "summary_path": str(summary_path),
        "trial_paths": [str(out / f"trial_{k}.jsonl") for k in sorted(records)],
        "trials_completed": len(records),
    }


# ---------------------------------------------------------------------------
# Sensitivity sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepConfig:
    """Grid sweep over network design axes with everything else held at the base.

    ``predictive`` mode fits the sampler on a fixed 1-d fixture and emits the
    posterior-predictive curve per setting; ``reward`` mode runs full
    optimization trials per setting and emits final rewards.
    """

    mode: str = "predictive"
    axes: dict = field(default_factory=lambda: {k: list(v) for k, v in SWEEP_GRIDS.items()})
    base: dict = field(default_factory=lambda: dict(SWEEP_BASE))
    master_seed: int = 0
    out_dir: str = "results"
    # predictive mode
    grid_points: int = 241
    n_draws: int = 10
    posterior_draws: int = 256
    hmc_burn_in: int = 200
    hmc_kept: int = 100
    # reward mode
    problem: str = "branin"
    problem_params: dict = field(default_factory=dict)
    trials: int = 10
    n_init: int = 10
    batch: int = 5
    max_evals: int = 100

    def __post_init__(self):
        if self.mode not in ("predictive", "reward"):
            raise ValueError("sweep mode must be 'predictive' or 'reward'")


def _sweep_mlp(base: dict, axis: str, value) -> MlpSpec:
    params = dict(base)
    params[axis] = value
    return MlpSpec(
        input_dim=1,
        hidden_widths=(int(params["width"]),) * int(params["depth"]),
        output_dim=1,
        activation=str(params["activation"]),
        prior_variance=float(params["prior_variance"]),
        likelihood_variance=float(params["likelihood_variance"]),
    )


def sweep_fixture_dataset() -> Dataset:
    """The 1-d toy observed at four fixed query points."""
    problem = make_problem("nonstationary1d")
    x = np.array(SWEEP_QUERY_POINTS)[:, None]
    return Dataset(x, problem.evaluate(x), problem.bounds)


def predictive_cell(spec: MlpSpec, sweep: SweepConfig, rng) -> dict:
    """Fit the sampler on the fixture and evaluate the predictive on a dense grid."""
    from .posteriors import HmcConfig

    ds = sweep_fixture_dataset()
    cfg = SurrogateConfig(
        kind="hmc",
        mlp=spec,
        hmc=HmcConfig(burn_in=sweep.hmc_burn_in, kept_samples=sweep.hmc_kept),
    )
    fitted = sur_mod.fit(cfg, ds, rng)
    grid = np.linspace(ds.bounds[0, 0], ds.bounds[0, 1], sweep.grid_points)[:, None]
    draws = fitted.draws(grid, sweep.posterior_draws, rng)
    mean = draws[:, :, 0].mean(axis=0)
    std = draws[:, :, 0].std(axis=0)
    return {
        "grid": grid[:, 0],
        "mean": mean,
        "std": std,
        "draws": draws[: sweep.n_draws, :, 0],
        "query_x": np.asarray(SWEEP_QUERY_POINTS),
    }


def between_data_std(cell: dict, exclusion: float = 0.5) -> float:
    """Average predictive std over grid points away from every query point."""
    grid = cell["grid"]
    dist = np.min(np.abs(grid[:, None] - cell["query_x"][None, :]), axis=1)
    mask = dist > exclusion
    return float(cell["std"][mask].mean())


def sensitivity_sweep(sweep: SweepConfig, out_dir=None) -> dict:
    """Run every (axis, value) cell; failed cells are recorded and skipped."""
    out = Path(out_dir if out_dir is not None else sweep.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    failures: list[dict] = []

    for axis, values in sweep.axes.items():
        for value in values:
            cell_tag = zlib.crc32(f"{axis}={value}".encode())
            rng = np.random.default_rng(
                np.random.SeedSequence([sweep.master_seed, cell_tag])
            )
            try:
                if sweep.mode == "predictive":
                    spec = _sweep_mlp(sweep.base, axis, value)
                    cell = predictive_cell(spec, sweep, rng)
                    for i, x in enumerate(cell["grid"]):
                        rows.append(
                            {
                                "axis": axis,
                                "value": value,
                                "x": float(x),
                                "mean": float(cell["mean"][i]),
                                "std": float(cell["std"][i]),
                                **{
                                    f"draw_{k}": float(cell["draws"][k, i])
                                    for k in range(cell["draws"].shape[0])
                                },
                            }
                        )
                else:
                    spec = _sweep_mlp(sweep.base, axis, value)
                    for t in range(sweep.trials):
                        cfg = BoConfig(
                            problem=sweep.problem,
                            problem_params=dict(sweep.problem_params),
                            surrogate=SurrogateConfig(kind="hmc", mlp=spec),
                            n_init=sweep.n_init,
                            batch=sweep.batch,
                            max_evals=sweep.max_evals,
                            trials=1,
                            master_seed=int(
                                np.random.SeedSequence([sweep.master_seed, cell_tag])
                                .generate_state(1)[0]
                            ),
                            label=f"{axis}={value}",
                        )
                        rec = run_trial(cfg, t)
                        rows.append(
                            {
                                "axis": axis,
                                "value": value,
                                "trial": t,
                                "final_best": rec.rows[-1]["best"],
                            }
                        )
            except Exception as exc:  # noqa: BLE001 - sweep continues past failed cells
                failures.append({"axis": axis, "value": value, "error": str(exc)})

    path = out / ("sweep_predictive.csv" if sweep.mode == "predictive" else "sweep_reward.csv")
    if rows:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return {"rows": rows, "failures": failures, "csv_path": str(path)}
