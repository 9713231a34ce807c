"""Command-line entry point: generate, run, evaluate and report."""

import argparse
import logging
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path

from bandit_rex import __version__
from bandit_rex.config_manager import ConfigManager, ExperimentConfig
from bandit_rex.errors import ConfigError, MissingDataFile, SolverFailure
from bandit_rex.parser import load_environment
from bandit_rex.reporting import write_report, write_results
from bandit_rex.runner import run_experiment
from bandit_rex.simdata import generate_environment, generate_logs, write_environment
from bandit_rex.utils import configure_logging, named_stream, notify

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MISSING_DATA = 2
EXIT_SOLVER = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bandit-rex",
        description="Diversity-constrained contextual bandit experiments on synthetic data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="only show warnings and errors")

    experiment = argparse.ArgumentParser(add_help=False, parents=[common])
    experiment.add_argument("--config", type=Path, help="experiment JSON (default: packaged)")
    experiment.add_argument("--out", help="output directory (overrides output_dir)")
    experiment.add_argument("--seed", type=int, help="base seed (overrides environment.seed)")

    commands.add_parser(
        "generate", parents=[experiment], help="write a synthetic environment and its log"
    )
    run = commands.add_parser("run", parents=[experiment], help="run the configured experiment")
    run.add_argument("--policies", help="comma-separated policy names to keep")
    evaluate = commands.add_parser(
        "evaluate", parents=[experiment], help="run the experiment on a generated data directory"
    )
    evaluate.add_argument("--policies", help="comma-separated policy names to keep")
    evaluate.add_argument("--data", type=Path, required=True, help="directory written by generate")
    report = commands.add_parser("report", parents=[common], help="summarize a results directory")
    report.add_argument("results", type=Path, help="directory written by run or evaluate")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Read the experiment document and apply the command-line overrides."""
    manager = ConfigManager(args.config)
    config = manager.get_config()
    logger.info("Loaded experiment %s from %s", config.version, manager.path)
    policies = getattr(args, "policies", None)
    names = [name.strip() for name in policies.split(",") if name.strip()] if policies else None
    return config.with_overrides(seed=args.seed, policy_names=names, output_dir=args.out)


def cmd_generate(args: argparse.Namespace) -> int:
    """Write the environment, its interaction log and ground truth to --out (default data/)."""
    config = load_config(args)
    out_dir = Path(args.out) if args.out else Path("data")
    env = generate_environment(config.environment)
    settings = config.settings
    log = generate_logs(
        env,
        settings.logging_policy,
        env.config.horizon_weeks,
        slate_size=settings.logging_slate_size,
        rng=named_stream(env.config.seed, "logs"),
    )
    written = write_environment(env, out_dir, log)
    notify(f"bandit-rex: wrote {len(written)} files to {out_dir}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    """Run every replication and write the result tables."""
    config = load_config(args)
    result = run_experiment(config)
    write_results(result, config.output_dir)
    notify(f"bandit-rex: results written to {config.output_dir}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Run the experiment against an environment read back from --data."""
    config = load_config(args)
    env, log = load_environment(args.data)
    if args.seed is None:
        config = replace(config, environment=env.config)
    result = run_experiment(config, data=(env, log))
    write_results(result, config.output_dir)
    notify(f"bandit-rex: results for {args.data} written to {config.output_dir}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """Write summary tables for a results directory and print the summary."""
    summary = write_report(args.results)
    notify(summary.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run one subcommand and map errors to exit codes.

    Returns:
        0 on success, 1 for an invalid configuration, 2 for a missing data file and 3 for
        a posterior solver failure
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.quiet)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        notify(f"bandit-rex: invalid configuration: {e}", logging.ERROR)
        return EXIT_CONFIG
    except MissingDataFile as e:
        notify(f"bandit-rex: {e}", logging.ERROR)
        return EXIT_MISSING_DATA
    except SolverFailure as e:
        notify(f"bandit-rex: solver failure: {e}", logging.ERROR)
        return EXIT_SOLVER
