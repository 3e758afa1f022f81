#!/usr/bin/env python3
"""
Stealthbench - Command Line Interface
Run the benchmark experiments and validate their configs
"""

import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click

# Add the project root to Python path
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from core.errors import StealthbenchError  # noqa: E402
from core.registry import ExperimentRegistry, canonical_name  # noqa: E402
from utils.helpers import load_config, load_config_file  # noqa: E402
from utils.logger import setup_logger  # noqa: E402

EXPERIMENTS = {
    "inventory-tradeoff": "Victim reward vs. information rate for constrained, LP and penalized attacks.",
    "inventory-detect": "CUSUM and GLR detection delays on the inventory benchmark.",
    "inventory-gamma-sweep": "Discounted information rate against its ergodic limit.",
    "linear-attack": "Attacked linear-Gaussian trajectories and deterministic vs. Gaussian values.",
    "linear-frontier": "beta* and the stationary curves of the linear-Gaussian attack.",
}


class BenchmarkCLI:
    """Command line interface for Stealthbench"""

    def __init__(self, log_level: Optional[str] = None):
        self.framework_config = load_config(str(PROJECT_ROOT / "config" / "config.yaml"))
        level = log_level or self.framework_config.get("framework", {}).get("log_level")
        self.logger = setup_logger(level)
        self.registry = ExperimentRegistry(str(PROJECT_ROOT / "experiments"), self.framework_config)
        self.registry.discover_experiments()

    @staticmethod
    def overrides(config: Optional[str], out: Optional[str], seed: Optional[int],
                  trials: Optional[int], threads: Optional[int]) -> Dict[str, Any]:
        """User config file first, explicit flags on top"""
        layer = load_config_file(config) if config else {}
        flags = {"out": out, "seed": seed, "trials": trials, "threads": threads}
        layer.update({key: value for key, value in flags.items() if value is not None})
        return layer

    def run(self, name: str, **options):
        report = self.registry.run_experiment_sync(name, self.overrides(**options))
        click.echo(f"✅ {name}: {len(report.artifacts)} artifacts in {report.out_dir}")
        for artifact in report.artifacts:
            click.echo(f"  • {artifact}")

    def validate(self, name: str, **options):
        config = self.registry.resolve_config(name, self.overrides(**options))
        click.echo(f"✅ {canonical_name(name)}: config valid, hash {config.digest}")


def run_options(func):
    """Flags shared by every experiment command"""
    options = [
        click.option("--config", "config", type=click.Path(dir_okay=False), help="JSON or YAML config merged over the defaults."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Master seed."),
        click.option("--trials", type=click.IntRange(min=1), help="Monte Carlo trials."),
        click.option("--threads", type=click.IntRange(min=1), help="Worker threads."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.option("--log-level", default=None, help="Overrides framework.log_level.")
@click.pass_context
def cli(ctx, log_level):
    """🛰️  Stealthbench - stealthy control-channel attacks and their detection"""
    ctx.obj = BenchmarkCLI(log_level)


def _experiment_command(name: str, help_text: str):
    @cli.command(name=name, help=help_text)
    @run_options
    @click.pass_obj
    def command(bench: BenchmarkCLI, **options):
        try:
            bench.run(name, **options)
        except StealthbenchError as e:
            raise click.ClickException(str(e))

    return command


for _name, _help in EXPERIMENTS.items():
    _experiment_command(_name, _help)


@cli.command()
@click.argument("experiment", type=click.Choice(sorted(EXPERIMENTS)))
@run_options
@click.pass_obj
def validate(bench: BenchmarkCLI, experiment: str, **options):
    """Validate the merged config of EXPERIMENT and print its hash."""
    try:
        bench.validate(experiment, **options)
    except StealthbenchError as e:
        raise click.ClickException(str(e))


@cli.command(name="list")
@click.pass_obj
def list_experiments(bench: BenchmarkCLI):
    """List discovered experiments."""
    for name in bench.registry.available():
        click.echo(f"  • {name}")


def main():
    cli()


if __name__ == "__main__":
    main()
