"""Command-line interface.

Subcommands: ``run`` (experiment from a TOML config), ``sweep`` (sensitivity
grids), ``problems`` (registry listing), ``selftest`` (oracle suite). Exit
codes: 0 success, 1 configuration error, 2 runtime failure. The output
directory resolves as --out, then $BOBENCH_OUT, then the config's run.out.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .errors import ConfigError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bobench",
        description="Bayesian optimization with swappable surrogate models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("--config", required=True, help="TOML config or preset name")
    run_p.add_argument("--out", help="output directory (overrides config and env)")
    run_p.add_argument("--seed", type=int, help="override run.seed")
    run_p.add_argument("--trials", type=int, help="override run.trials")
    run_p.add_argument("--threads", type=int, help="override run.threads")

    sweep_p = sub.add_parser("sweep", help="run a sensitivity sweep")
    sweep_p.add_argument("--config", required=True, help="TOML sweep config or preset name")
    sweep_p.add_argument("--out", help="output directory (overrides config and env)")
    sweep_p.add_argument("--seed", type=int, help="override sweep.seed")
    sweep_p.add_argument("--trials", type=int, help="override run.trials (reward mode)")
    sweep_p.add_argument("--threads", type=int, help="accepted for symmetry; sweeps are serial")

    sub.add_parser("problems", help="list the benchmark problem registry")
    sub.add_parser("selftest", help="run the derived-oracle checks")
    return parser


def _resolve_config_path(arg: str):
    from .config import preset_path

    if os.path.exists(arg):
        return arg
    if not arg.endswith(".toml"):
        return preset_path(arg)
    raise ConfigError(f"config file not found: {arg}")


def _resolve_out(cli_out, cfg_out: str) -> str:
    if cli_out:
        return cli_out
    env = os.environ.get("BOBENCH_OUT")
    if env:
        return env
    return cfg_out


def _cmd_run(args) -> int:
    from .config import load_config
    from .harness import run_experiment

    cfg = load_config(_resolve_config_path(args.config))
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.threads is not None:
        overrides["threads"] = args.threads
    overrides["out_dir"] = _resolve_out(args.out, cfg.out_dir)
    cfg = dataclasses.replace(cfg, **overrides)

    result = run_experiment(cfg)
    print(f"completed {result['trials_completed']}/{cfg.trials} trials")
    print(f"summary: {result['summary_path']}")
    if result["summary"]:
        final = result["summary"][-1]
        print(f"final: evals={final['evals']} mean_best={final['mean_best']:.6g} "
              f"stderr={final['stderr_best']:.3g}")
    return 0


def _cmd_sweep(args) -> int:
    from .config import load_sweep_config
    from .harness import sensitivity_sweep

    cfg = load_sweep_config(_resolve_config_path(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    if args.trials is not None:
        cfg = dataclasses.replace(cfg, trials=args.trials)
    cfg = dataclasses.replace(cfg, out_dir=_resolve_out(args.out, cfg.out_dir))

    result = sensitivity_sweep(cfg)
    print(f"sweep wrote {len(result['rows'])} rows to {result['csv_path']}")
    for failure in result["failures"]:
        print(f"cell failed: {failure['axis']}={failure['value']}: {failure['error']}")
    return 0 if not result["failures"] else 2


def _cmd_problems() -> int:
    from .problems import list_problems

    rows = list_problems()
    header = f"{'name':<16} {'dim':>4} {'obj':>4}  {'known_best':>12}  bounds[0]"
    print(header)
    print("-" * len(header))
    for r in rows:
        kb = "-" if r["known_best"] is None else f"{r['known_best']:.6g}"
        print(f"{r['name']:<16} {r['dim']:>4} {r['objectives']:>4}  {kb:>12}  {r['bounds'][0]}")
    return 0


def _cmd_selftest() -> int:
    from .selftest import run_selftest

    results = run_selftest()
    width = max(len(name) for name, _, _ in results)
    failures = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        failures += not ok
        print(f"{status}  {name:<{width}}  {detail}")
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 0 if failures == 0 else 2


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "problems":
            return _cmd_problems()
        return _cmd_selftest()
    except (ConfigError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted; partial results preserved", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
