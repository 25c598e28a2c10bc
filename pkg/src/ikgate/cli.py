"""Command-line interface.

Verbs mirror the pipeline stages: build-trainset, score, evaluate, ablate,
latency, characterize. All take a declarative YAML config plus a few global
overrides. Exit codes: 0 success, 1 usage/config error, 2 partial failure
(reports still emitted where possible), 3 backend unreachable.
"""

from __future__ import annotations

import json
import sys

import click

from .errors import (
    BackendError,
    ConfigError,
    IkGateError,
    NetworkDisabledError,
    StageError,
)
from .pipeline import Pipeline, RunConfig

# usage errors (unknown flag, bad choice) belong to exit code 1, with 2
# reserved for partial failures
click.UsageError.exit_code = 1

_CONFIG_OPTIONS = [
    click.option("--config", "config_path", required=True, type=click.Path(), help="YAML run config."),
    click.option("--out", "out_dir", default=None, type=click.Path(), help="Output directory override."),
    click.option("--seed", default=None, type=int, help="Seed override."),
    click.option(
        "--offline/--online",
        "offline",
        default=None,
        help="Offline mode: stub backends only, any network attempt fails.",
    ),
]


def _with_config_options(fn):
    for option in reversed(_CONFIG_OPTIONS):
        fn = option(fn)
    return fn


def _load(config_path: str, out_dir, seed, offline) -> Pipeline:
    config = RunConfig.from_yaml(config_path, out_dir=out_dir, seed=seed, offline=offline)
    return Pipeline(config)


def _execute(fn) -> None:
    try:
        pipeline, result = fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    except NetworkDisabledError as exc:
        click.echo(f"backend unreachable (offline): {exc}", err=True)
        sys.exit(3)
    except BackendError as exc:
        click.echo(f"backend unreachable: {exc}", err=True)
        sys.exit(3)
    except StageError as exc:
        click.echo(f"partial failure: {exc}", err=True)
        for item in exc.items[:20]:
            click.echo(f"  - {item}", err=True)
        sys.exit(2)
    except IkGateError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(json.dumps(result, sort_keys=True, indent=2, default=str))
    if pipeline is not None and pipeline.partial_failures:
        click.echo(
            f"partial failure: {len(pipeline.partial_failures)} query(ies) flagged", err=True
        )
        sys.exit(2)


@click.group()
def main() -> None:
    """Gate retrieval-augmented generation on a distilled 'I Know' score."""


@main.command("build-trainset")
@_with_config_options
def build_trainset(config_path, out_dir, seed, offline) -> None:
    """Generate answers, grade them, and export classifier trainsets."""

    def run():
        pipeline = _load(config_path, out_dir, seed, offline)
        return pipeline, pipeline.cmd_build_trainset()

    _execute(run)


@main.command("score")
@_with_config_options
def score(config_path, out_dir, seed, offline) -> None:
    """Compute IK scores for the validation queries."""

    def run():
        pipeline = _load(config_path, out_dir, seed, offline)
        return pipeline, pipeline.cmd_score()

    _execute(run)


@main.command("evaluate")
@_with_config_options
def evaluate(config_path, out_dir, seed, offline) -> None:
    """Emit the full eval report: ACC/AUC, sweep, best point, histogram, latency."""

    def run():
        pipeline = _load(config_path, out_dir, seed, offline)
        return pipeline, pipeline.cmd_evaluate()

    _execute(run)


@main.command("ablate")
@click.option(
    "--axis",
    required=True,
    type=click.Choice(["prefix_length", "trainset_size", "teacher"]),
    help="Which ablation table to build.",
)
@_with_config_options
def ablate(axis, config_path, out_dir, seed, offline) -> None:
    """Build an ablation table (one evaluate row per cell)."""

    def run():
        pipeline = _load(config_path, out_dir, seed, offline)
        return pipeline, pipeline.cmd_ablate(axis)

    _execute(run)


@main.command("latency")
@_with_config_options
def latency(config_path, out_dir, seed, offline) -> None:
    """Emit path costs and the expected-latency curve for the configured costs."""

    def run():
        pipeline = _load(config_path, out_dir, seed, offline)
        return pipeline, pipeline.cmd_latency()

    _execute(run)


@main.command("characterize")
@_with_config_options
def characterize(config_path, out_dir, seed, offline) -> None:
    """Histogram the IK scores and classify the dataset's knowledge pattern."""

    def run():
        pipeline = _load(config_path, out_dir, seed, offline)
        return pipeline, pipeline.cmd_characterize()

    _execute(run)


if __name__ == "__main__":
    main()
