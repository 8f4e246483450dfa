"""
FairLane command line: plan the route library, run one scenario, run a
scenario grid or re-render plots.

Exit codes: 0 ok, 1 run failure, 2 config error.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from config import config
from models.data_models import Policy
from models.scenario_config import ScenarioConfig
from services.grid_runner import expand_grid, replot, run_grid, run_one
from services.route_library import build_route_set
from services.scenario_loader import ConfigError, load_config, parse_config
from utils.logger import get_logger, log_exceptions

logger = get_logger("main")

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG_ERROR = 0, 1, 2
POLICY_NAMES = [p.value for p in Policy]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairlane", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"{config.app.name} {config.app.version}")
    commands = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--cache", type=Path, default=Path(config.app.cache_dir),
                        help="trajectory cache directory (default: %(default)s)")

    scenario = argparse.ArgumentParser(add_help=False)
    scenario.add_argument("--seed", type=int, help="override simulation.seed")
    scenario.add_argument("--horizon", type=float, help="override simulation.horizon [s]")
    scenario.add_argument("--out", type=Path, help=f"output root (default: {config.app.output_dir})")
    scenario.add_argument("--no-plots", action="store_true", help="skip SVG rendering")

    plan = commands.add_parser("plan", parents=[common], help="plan and cache the route library")
    plan.add_argument("--config", type=Path, help="scenario document (JSON)")

    run = commands.add_parser("run", parents=[common, scenario], help="run a single scenario")
    run.add_argument("--config", type=Path, help="scenario document (JSON)")
    run.add_argument("--policy", choices=POLICY_NAMES, help="override simulation.policy")

    grid = commands.add_parser("grid", parents=[common, scenario],
                               help="run scenario documents, or the demand x distribution grid")
    grid.add_argument("--config", type=Path, action="append", default=[],
                      help="scenario document, repeatable; without it the preset grid is expanded")
    grid.add_argument("--policy", choices=POLICY_NAMES, action="append", default=[],
                      help="policy to include, repeatable (default: all)")
    grid.add_argument("--jobs", type=int, default=config.app.default_jobs, help="worker processes")

    plot = commands.add_parser("plot", help="re-render plots of a run directory or grid root")
    plot.add_argument("path", type=Path)
    return parser


def _load(path: Optional[Path]) -> ScenarioConfig:
    return load_config(path) if path is not None else parse_config("")


def _override(cfg: ScenarioConfig, args: argparse.Namespace, policy: Optional[str] = None) -> ScenarioConfig:
    """Apply command-line overrides on top of a scenario document"""
    simulation = {}
    if policy is not None:
        simulation["policy"] = policy
    if args.seed is not None:
        simulation["seed"] = args.seed
    if args.horizon is not None:
        simulation["horizon"] = args.horizon
    if args.out is not None:
        simulation["output_dir"] = str(args.out)
    if not simulation:
        return cfg
    try:
        return cfg.with_overrides(simulation=simulation)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first.get("msg", "invalid value"),
                          key=".".join(str(part) for part in first.get("loc", ())) or None) from e


def cmd_plan(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    routes = build_route_set(cfg, args.cache)
    print(f"{len(routes.routes)} routes cached under {args.cache / routes.cache_key[:16]}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _override(_load(args.config), args, args.policy)
    outcome = run_one(cfg, Path(config.app.output_dir), args.cache, plots=not args.no_plots)
    if not outcome.ok:
        print(f"Run {outcome.label} failed: {outcome.error}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    print(f"Run {outcome.label} written to {outcome.run_dir}")
    return EXIT_OK


def grid_configs(args: argparse.Namespace) -> List[ScenarioConfig]:
    policies = args.policy or POLICY_NAMES
    if args.config:
        docs = [load_config(path) for path in args.config]
        if args.policy:
            return [_override(doc, args, policy) for doc in docs for policy in policies]
        return [_override(doc, args) for doc in docs]
    return [_override(cfg, args) for cfg in expand_grid([Policy(p) for p in policies])]


def cmd_grid(args: argparse.Namespace) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1", key="--jobs")
    configs = grid_configs(args)
    out_root = args.out or Path(config.app.output_dir)
    status = run_grid(configs, jobs=args.jobs, out_root=out_root, cache_dir=args.cache, plots=not args.no_plots)
    print(f"{len(configs)} runs, comparison table in {out_root / 'comparison.txt'}")
    return status


def cmd_plot(args: argparse.Namespace) -> int:
    try:
        written = replot(args.path)
    except FileNotFoundError as e:
        print(str(e), file=sys.stderr)
        return EXIT_RUN_FAILURE
    print(f"{len(written)} plots written to {args.path / 'plots'}")
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "run": cmd_run, "grid": cmd_grid, "plot": cmd_plot}


@log_exceptions("main")
def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger.info(f"{config.app.name} {config.app.version}: {args.command}")
    logger.debug(f"Settings: {config.to_dict()}")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
