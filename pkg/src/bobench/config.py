"""TOML experiment configuration: schema, validation, and shipped presets.

A run config has four sections — [problem], [surrogate], [acquisition],
[run] — all flat key-value pairs. Validation errors name the offending key
path. Preset files transcribing the per-problem experiment settings live in
the package's ``presets`` directory.
"""

from __future__ import annotations

import importlib.resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .acquisition import AcqConfig
from .errors import ConfigError
from .gp import DklConfig, GpOptConfig, GpPriorConfig, IbnnKernelSpec
from .harness import BoConfig, SweepConfig
from .mlp import MlpSpec
from .posteriors import EnsembleConfig, HmcConfig, LlaConfig, SghmcConfig
from .surrogates import SURROGATE_KINDS, SurrogateConfig


def _section(data: dict, name: str) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section [{name}] must be a table")
    return dict(sec)


class _Keys:
    """Typed take-or-default access that tracks unconsumed keys."""

    def __init__(self, section: str, values: dict):
        self.section = section
        self.values = values

    def take(self, key, default=None, kind=None, required=False):
        path = f"{self.section}.{key}"
        if key not in self.values:
            if required:
                raise ConfigError(f"missing required key {path}")
            return default
        val = self.values.pop(key)
        if kind is bool and isinstance(val, bool):
            return val
        if kind is int and isinstance(val, bool):
            raise ConfigError(f"key {path} must be an integer")
        if kind is int and isinstance(val, int):
            return val
        if kind is float and isinstance(val, (int, float)) and not isinstance(val, bool):
            return float(val)
        if kind is str and isinstance(val, str):
            return val
        if kind is list and isinstance(val, list):
            return val
        if kind is None:
            return val
        raise ConfigError(f"key {path} must be of type {kind.__name__}")

    def reject_leftovers(self):
        if self.values:
            key = sorted(self.values)[0]
            raise ConfigError(f"unknown key {self.section}.{key}")


def _parse_mlp(keys: _Keys) -> MlpSpec | None:
    widths = keys.take("hidden_widths", kind=list)
    layers = keys.take("hidden_layers", kind=int)
    width = keys.take("width", kind=int)
    activation = keys.take("activation", "tanh", kind=str)
    lik = keys.take("likelihood_variance", 1.0, kind=float)
    prior = keys.take("prior_variance", 1.0, kind=float)
    if widths is not None and (layers is not None or width is not None):
        raise ConfigError(
            f"give either {keys.section}.hidden_widths or width/hidden_layers, not both"
        )
    if widths is None:
        if layers is None and width is None:
            return None
        if layers is None or width is None:
            raise ConfigError(f"{keys.section} needs both width and hidden_layers")
        widths = [width] * layers
    try:
        return MlpSpec(1, tuple(int(w) for w in widths), 1, activation=activation,
                       prior_variance=prior, likelihood_variance=lik)
    except ValueError as exc:
        raise ConfigError(f"invalid {keys.section} architecture: {exc}") from exc


def parse_surrogate(section: dict) -> SurrogateConfig:
    keys = _Keys("surrogate", dict(section))
    kind = keys.take("kind", "gp", kind=str)
    if kind not in SURROGATE_KINDS:
        raise ConfigError(f"surrogate.kind must be one of {list(SURROGATE_KINDS)}")
    mlp_spec = _parse_mlp(keys)

    ibnn = IbnnKernelSpec(
        depth=keys.take("ibnn_depth", 3, kind=int),
        weight_variance=keys.take("ibnn_weight_variance", 10.0, kind=float),
        bias_variance=keys.take("ibnn_bias_variance", 1.3, kind=float),
    )
    ibnn_noise = keys.take("ibnn_likelihood_variance", 1e-4, kind=float)
    gp_opt = GpOptConfig(
        restarts=keys.take("gp_restarts", 3, kind=int),
        iterations=keys.take("gp_iterations", 200, kind=int),
        learning_rate=keys.take("gp_learning_rate", 0.05, kind=float),
        ard=keys.take("gp_ard", False, kind=bool),
    )
    hmc = HmcConfig(
        leapfrog_steps=keys.take("hmc_leapfrog_steps", 50, kind=int),
        target_accept=keys.take("hmc_target_accept", 0.75, kind=float),
        burn_in=keys.take("hmc_burn_in", 200, kind=int),
        kept_samples=keys.take("hmc_kept_samples", 100, kind=int),
        thinning=keys.take("hmc_thinning", 2, kind=int),
        init_step_size=keys.take("hmc_init_step_size", 0.01, kind=float),
    )
    sghmc = SghmcConfig(
        minibatch_size=keys.take("sghmc_minibatch", 5, kind=int),
        step_size=keys.take("sghmc_step_size", None, kind=float),
        friction=keys.take("sghmc_friction", 0.05, kind=float),
        iterations=keys.take("sghmc_iterations", 5000, kind=int),
        burn_in=keys.take("sghmc_burn_in", 2000, kind=int),
        kept_samples=keys.take("sghmc_kept_samples", 100, kind=int),
    )
    ensemble = EnsembleConfig(
        n_models=keys.take("ensemble_models", 10, kind=int),
        subset_fraction=keys.take("ensemble_subset", 0.8, kind=float),
        iterations=keys.take("ensemble_iterations", 1000, kind=int),
        learning_rate=keys.take("ensemble_learning_rate", 1e-2, kind=float),
    )
    lla = LlaConfig(
        iterations=keys.take("lla_iterations", 1000, kind=int),
        learning_rate=keys.take("lla_learning_rate", 1e-2, kind=float),
    )
    dkl = DklConfig(
        iterations=keys.take("dkl_iterations", 500, kind=int),
        learning_rate=keys.take("dkl_learning_rate", 1e-2, kind=float),
        warmup_iterations=keys.take("dkl_warmup_iterations", 100, kind=int),
    )
    keys.reject_leftovers()

    if kind in ("hmc", "sghmc", "ensemble", "lla", "dkl") and mlp_spec is None:
        raise ConfigError(
            f"surrogate.kind = {kind!r} requires an architecture "
            "(surrogate.width and surrogate.hidden_layers)"
        )
    return SurrogateConfig(
        kind=kind, mlp=mlp_spec, ibnn=ibnn, ibnn_likelihood_variance=ibnn_noise,
        gp_priors=GpPriorConfig(), gp_opt=gp_opt, hmc=hmc, sghmc=sghmc,
        ensemble=ensemble, lla=lla, dkl=dkl,
    )


def parse_acquisition(section: dict) -> AcqConfig:
    keys = _Keys("acquisition", dict(section))
    cfg = AcqConfig(
        mc_draws=keys.take("mc_draws", 128, kind=int),
        candidate_pool=keys.take("candidate_pool", 1024, kind=int),
        refine_starts=keys.take("refine_starts", 10, kind=int),
        refine_iters=keys.take("refine_iters", 50, kind=int),
    )
    keys.reject_leftovers()
    return cfg


def parse_config(data: dict) -> BoConfig:
    problem = _section(data, "problem")
    if "name" not in problem:
        raise ConfigError("missing required key problem.name")
    name = problem.pop("name")
    if not isinstance(name, str):
        raise ConfigError("key problem.name must be a string")
    problem_params = {
        k: (tuple(v) if isinstance(v, list) else v) for k, v in problem.items()
    }

    surrogate = parse_surrogate(_section(data, "surrogate"))
    acq = parse_acquisition(_section(data, "acquisition"))

    run_keys = _Keys("run", _section(data, "run"))
    try:
        cfg = BoConfig(
            problem=name,
            problem_params=problem_params,
            surrogate=surrogate,
            acq=acq,
            n_init=run_keys.take("n_init", 10, kind=int),
            batch=run_keys.take("batch", 1, kind=int),
            max_evals=run_keys.take("max_evals", 100, kind=int),
            trials=run_keys.take("trials", 5, kind=int),
            master_seed=run_keys.take("seed", 0, kind=int),
            threads=run_keys.take("threads", 1, kind=int),
            out_dir=run_keys.take("out", "results", kind=str),
            label=run_keys.take("label", "", kind=str),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [run] settings: {exc}") from exc
    run_keys.reject_leftovers()

    extra = set(data) - {"problem", "surrogate", "acquisition", "run"}
    if extra:
        raise ConfigError(f"unknown section [{sorted(extra)[0]}]")
    return cfg


def parse_sweep_config(data: dict) -> SweepConfig:
    sweep = _Keys("sweep", _section(data, "sweep"))
    axes_raw = sweep.take("axes", None)
    base_raw = sweep.take("base", None)
    problem = _section(data, "problem")
    name = problem.pop("name", "branin")
    run = _Keys("run", _section(data, "run"))

    from .harness import SWEEP_BASE, SWEEP_GRIDS

    axes = {k: list(v) for k, v in SWEEP_GRIDS.items()} if axes_raw is None else dict(axes_raw)
    for axis in axes:
        if axis not in SWEEP_GRIDS:
            raise ConfigError(f"unknown sweep axis sweep.axes.{axis}")
    base = dict(SWEEP_BASE)
    if base_raw:
        for k, v in dict(base_raw).items():
            if k not in SWEEP_BASE:
                raise ConfigError(f"unknown key sweep.base.{k}")
            base[k] = v

    cfg = SweepConfig(
        mode=sweep.take("mode", "predictive", kind=str),
        axes=axes,
        base=base,
        master_seed=sweep.take("seed", 0, kind=int),
        out_dir=sweep.take("out", "results", kind=str),
        grid_points=sweep.take("grid_points", 241, kind=int),
        n_draws=sweep.take("draws", 10, kind=int),
        posterior_draws=sweep.take("posterior_draws", 256, kind=int),
        hmc_burn_in=sweep.take("hmc_burn_in", 200, kind=int),
        hmc_kept=sweep.take("hmc_kept", 100, kind=int),
        problem=name,
        problem_params={k: (tuple(v) if isinstance(v, list) else v)
                        for k, v in problem.items()},
        trials=run.take("trials", 10, kind=int),
        n_init=run.take("n_init", 10, kind=int),
        batch=run.take("batch", 5, kind=int),
        max_evals=run.take("max_evals", 100, kind=int),
    )
    sweep.reject_leftovers()
    run.reject_leftovers()
    if cfg.mode not in ("predictive", "reward"):
        raise ConfigError("key sweep.mode must be 'predictive' or 'reward'")
    return cfg


def load_toml(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {p}: {exc}") from exc


def load_config(path) -> BoConfig:
    return parse_config(load_toml(path))


def load_sweep_config(path) -> SweepConfig:
    return parse_sweep_config(load_toml(path))


def preset_path(name: str) -> Path:
    """Path of a shipped preset file, e.g. preset_path('branin')."""
    root = importlib.resources.files("bobench") / "presets"
    p = root / f"{name}.toml"
    if not p.is_file():
        available = sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".toml"))
        raise ConfigError(f"unknown preset {name!r}; available: {available}")
    return Path(str(p))


def list_presets() -> list[str]:
    root = importlib.resources.files("bobench") / "presets"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".toml"))
