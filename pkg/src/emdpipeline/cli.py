"""
Command-line interface: ``emd-motion synth|detect|eval|flow``.
"""

import logging
import logging.config
from collections.abc import Callable, Sequence
from dataclasses import replace
from typing import Any, TypeVar

import click

from emdmotion.config import PipelineConfig
from emdmotion.errors import ConfigurationError, EmdMotionError

from . import runner
from .settings import ExitCodes, OutputFiles, logging_config

logger = logging.getLogger(__name__)

F = TypeVar("F", bound=Callable[..., Any])


def common_options(function: F) -> F:
    """Options shared by every subcommand."""
    function = click.option("--verbose", "-v", is_flag=True, help="Log per-cell details.")(function)
    function = click.option("--out", "-o", type=click.Path(file_okay=False), help="Output directory.")(function)
    function = click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML configuration file."
    )(function)
    return function


def load_config(config_path: str | None, verbose: bool, **overrides: Any) -> PipelineConfig:
    """Configure logging, load the configuration and apply command-line overrides.

    Args:
        config_path: YAML file, defaults when omitted
        verbose: Lower the log level to DEBUG
        **overrides: Flag values; None leaves the configured value

    Returns:
        The effective configuration

    Raises:
        ConfigurationError: If the file or an override is invalid
    """
    logging.config.dictConfig(logging_config(verbose))
    config = PipelineConfig.load(config_path) if config_path else PipelineConfig()
    io_values = {
        key: overrides[name]
        for name, key in (("out", "output"), ("frames", "frames"), ("sequence", "sequence"))
        if overrides.get(name) is not None
    }
    if io_values:
        config = replace(config, io=replace(config.io, **io_values))
    if overrides.get("exhaustive"):
        config = replace(config, search=replace(config.search, strategy="exhaustive"))
    if overrides.get("fusion_k") is not None:
        config = replace(config, fusion=replace(config.fusion, num_frames=overrides["fusion_k"]))
    if overrides.get("seed") is not None:
        config = replace(config, seed=overrides["seed"])
    if overrides.get("workers") is not None:
        config = replace(config, workers=overrides["workers"])
    return config


@click.group()
def cli() -> None:
    """Detect moving objects in Lidar sequences with elementary motion detectors."""


@cli.command()
@click.argument("spec", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--suite", is_flag=True, help="Write the standard twenty-scene suite.")
@click.option("--seed", type=click.IntRange(min=0), help="Seed overriding the scene description.")
@common_options
def synth(
    spec: str | None, suite: bool, seed: int | None, config_path: str | None, out: str | None, verbose: bool
) -> int:
    """Generate a synthetic labeled sequence from SPEC."""
    config = load_config(config_path, verbose, out=out)
    written = runner.run_synth(spec, config.io.output, config, seed, suite)
    click.echo(f"Wrote {len(written)} sequence(s) to {config.io.output}")
    return ExitCodes.SUCCESS


@cli.command()
@click.argument("sequence", required=False, type=click.Path(file_okay=False))
@click.option("--frames", help="Half-open frame range start:stop.")
@click.option("--exhaustive", is_flag=True, help="Full-disc search at every occupied cell.")
@click.option("--fusion-k", type=int, help="Number of fused frame intervals.")
@click.option("--seed", type=click.IntRange(min=0), help="Seed recorded in the manifest.")
@click.option("--workers", type=click.IntRange(min=1), help="Threads of the exact-match stage.")
@click.option("--export-bev", is_flag=True, help="Also write the BEV grids of every frame.")
@common_options
def detect(
    sequence: str | None,
    frames: str | None,
    exhaustive: bool,
    fusion_k: int | None,
    seed: int | None,
    workers: int | None,
    export_bev: bool,
    config_path: str | None,
    out: str | None,
    verbose: bool,
) -> int:
    """Detect moving objects in SEQUENCE."""
    config = load_config(
        config_path,
        verbose,
        sequence=sequence,
        out=out,
        frames=frames,
        exhaustive=exhaustive,
        fusion_k=fusion_k,
        seed=seed,
        workers=workers,
    )
    run = runner.run_detect(config, export_bev)
    click.echo(f"{len(run.detections)} detections written to {config.io.output}/{OutputFiles.DETECTIONS}")
    if run.failed_frames:
        logger.error("Frames %s failed.", run.failed_frames)
        return ExitCodes.DATA
    return ExitCodes.SUCCESS


@cli.command(name="eval")
@click.argument("detections", type=click.Path(exists=True, dir_okay=False))
@click.argument("labels", type=click.Path(exists=True, dir_okay=False))
@click.option("--calibration", type=click.Path(exists=True, dir_okay=False), help="KITTI calibration for the 2D view.")
@common_options
def evaluate(
    detections: str, labels: str, calibration: str | None, config_path: str | None, out: str | None, verbose: bool
) -> int:
    """Evaluate DETECTIONS against LABELS."""
    config = load_config(config_path, verbose, out=out)
    _, passed = runner.run_eval(config, detections, labels, calibration)
    return ExitCodes.SUCCESS if passed else ExitCodes.THRESHOLD


@cli.command()
@click.argument("motion_dir", type=click.Path(exists=True, file_okay=False))
@common_options
def flow(motion_dir: str, config_path: str | None, out: str | None, verbose: bool) -> int:
    """Render the motion CSVs of MOTION_DIR as flow images."""
    config = load_config(config_path, verbose, out=out)
    written = runner.run_flow(motion_dir, config.io.output, config)
    click.echo(f"Rendered {len(written)} flow image(s) into {config.io.output}")
    return ExitCodes.SUCCESS


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line and map failures to exit codes.

    Args:
        argv: Arguments, ``sys.argv[1:]`` when omitted

    Returns:
        0 on success, 1 for usage or configuration errors, 2 for data errors, 3 when evaluation thresholds are missed
    """
    try:
        result = cli.main(args=list(argv) if argv is not None else None, standalone_mode=False)
    except click.exceptions.Abort:
        return ExitCodes.CONFIGURATION
    except click.ClickException as exc:
        exc.show()
        return ExitCodes.CONFIGURATION
    except ConfigurationError as exc:
        logger.error("Configuration error: %s", exc)
        return ExitCodes.CONFIGURATION
    except (EmdMotionError, OSError) as exc:
        logger.error("Data error: %s", exc)
        return ExitCodes.DATA
    return result if isinstance(result, int) else ExitCodes.SUCCESS
