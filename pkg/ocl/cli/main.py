"""
OCL - Online Continual Learner - Command Line Interface

    ocl run --variant online-continual --seed 3 --output results/run.csv
    ocl sweep --variant online-baseline --variant online-continual --seeds 0,1,2
    ocl record --stream quadrant_sphere --seed 0 --output recordings/quadrant.bin
    ocl replay recordings/quadrant.bin --variant offline-joint
    ocl report results/sweep.csv
"""

import functools
import logging
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click
from dotenv import load_dotenv

from ocl.config import get_config
from ocl.errors import OclError
from ocl.harness import (
    MetricsLog,
    Variant,
    export_csv,
    format_report,
    load_run_config,
    read_csv,
    resolve_schedule,
    summarize,
    sweep,
    train_online,
)
from ocl.mas import OmegaMode
from ocl.profiles import get_profiles
from ocl.recording import record_stream
from ocl.schedule_file import dump_schedule
from ocl.streams import StreamKind, build_stream

logger = logging.getLogger(__name__)


def _run_options(command: Callable[..., Any]) -> Callable[..., Any]:
    """Flags shared by run, sweep and replay. They mirror the RunConfig fields; unset flags defer to --config."""
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path)),
        click.option("--profile", type=click.Choice(get_profiles())),
        click.option("--stream", type=click.Choice([k.value for k in StreamKind])),
        click.option("--schedule-file", type=click.Path(exists=True, dir_okay=False, path_type=Path)),
        click.option("--lr", type=float),
        click.option("--lam", type=float, help="Importance penalty weight (online-continual only)"),
        click.option("--buffer-capacity", type=int),
        click.option("--window-length", type=int),
        click.option("--delta-mu", type=float),
        click.option("--delta-sigma", type=float),
        click.option("--inner-steps", type=int),
        click.option("--hidden-sizes", type=str, help="Comma separated hidden layer widths, e.g. 64,32"),
        click.option("--omega-mode", type=click.Choice([m.value for m in OmegaMode])),
        click.option("--normalize-buffer/--no-normalize-buffer", default=None),
        click.option("--epochs", type=int),
        click.option("--eval-every", type=int),
        click.option("--test-per-segment", type=int),
        click.option("--prefetch", type=int, help="Produce the stream on a worker thread with this queue size"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _handle_errors(command: Callable[..., Any]) -> Callable[..., Any]:
    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except (OclError, OSError) as e:
            raise click.ClickException(str(e)) from e

    return wrapper


def _default_output(name: str) -> Path:
    return get_config().results_dir / name


def _finish(logs: list[MetricsLog], output: Path) -> None:
    export_csv(logs, output)
    click.echo(f"Wrote {sum(len(log.records) for log in logs)} rows to {output}")
    aborted = [log for log in logs if log.aborted]
    if aborted:
        for log in aborted:
            click.echo(f"{log.variant} seed {log.seed} aborted: {log.aborted}", err=True)
        raise click.exceptions.Exit(1)


@click.group()
def cli() -> None:
    """Task-free online continual learning on synthetic drifting streams."""
    path_env_file = Path.cwd() / ".env"
    if path_env_file.exists():
        load_dotenv(path_env_file)
    logging.basicConfig(level=get_config().log_level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--variant", type=click.Choice([v.value for v in Variant]))
@click.option("--seed", type=int)
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path))
@_run_options
@_handle_errors
def run(config_file: Path | None, output: Path | None, **flags: Any) -> None:
    """Train a single variant and write its metrics CSV."""
    config = load_run_config(config_file, **flags)
    log = train_online(config)
    _finish([log], output or _default_output(f"{config.variant}_seed{config.seed}.csv"))


@cli.command("sweep")
@click.option("--variant", "variants", multiple=True, type=click.Choice([v.value for v in Variant]))
@click.option("--seeds", default="0,1,2", show_default=True, help="Comma separated seeds")
@click.option("--workers", type=int, help="Parallel processes (default: OCL_SWEEP_WORKERS)")
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path))
@_run_options
@_handle_errors
def sweep_command(
    config_file: Path | None,
    variants: tuple[str, ...],
    seeds: str,
    workers: int | None,
    output: Path | None,
    **flags: Any,
) -> None:
    """Run every variant for every seed and write all rows into one CSV."""
    seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    configs = [
        load_run_config(config_file, **flags, variant=variant, seed=seed)
        for variant in (variants or [v.value for v in Variant])
        for seed in seed_list
    ]
    logs = sweep(configs, workers=workers or get_config().sweep_workers)
    _finish(logs, output or _default_output("sweep.csv"))


@cli.command()
@click.option("--profile", type=click.Choice(get_profiles()))
@click.option("--stream", type=click.Choice([k.value for k in StreamKind]))
@click.option("--schedule-file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--print-schedule", is_flag=True, help="Print the resolved schedule as a key-value file instead")
@_handle_errors
def record(
    profile: str | None,
    stream: str | None,
    schedule_file: Path | None,
    seed: int,
    output: Path | None,
    print_schedule: bool,
) -> None:
    """Record a stream to a binary file so several variants can train on identical data."""
    config = load_run_config(None, profile=profile, stream=stream, schedule_file=schedule_file, seed=seed)
    schedule = resolve_schedule(config)
    if print_schedule:
        click.echo(dump_schedule(schedule), nl=False)
        return
    path = output or get_config().recordings_dir / f"{schedule.kind}_seed{seed}.bin"
    count = record_stream(build_stream(seed, schedule), path)
    click.echo(f"Recorded {count} batches to {path}")


@cli.command()
@click.argument("recording", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--variant", type=click.Choice([v.value for v in Variant]))
@click.option("--seed", type=int)
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path))
@_run_options
@_handle_errors
def replay(recording: Path, config_file: Path | None, output: Path | None, **flags: Any) -> None:
    """Train on a recorded stream. Use the schedule and seed the recording was made with."""
    config = load_run_config(config_file, **flags, recording=recording)
    log = train_online(config)
    _finish([log], output or _default_output(f"{config.variant}_{recording.stem}.csv"))


@cli.command()
@click.argument("metrics", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@_handle_errors
def report(metrics: Path) -> None:
    """Summarize a metrics CSV: final accuracies and mean forgetting per variant and seed."""
    click.echo(format_report(summarize(read_csv(metrics))))


if __name__ == "__main__":
    cli()
