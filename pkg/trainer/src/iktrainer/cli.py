"""CLI: iktrainer train / iktrainer serve."""

from __future__ import annotations

import json
import sys

import click

from .serve import serve as run_server
from .train import TrainJobConfig, TrainingDiverged, train
from .trainset import TrainsetError


@click.group()
def main() -> None:
    """Train and serve the Yes/No first-token classifier."""


@main.command("train")
@click.option("--trainset", "trainset_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--base-model", default="tiny-causal", show_default=True)
@click.option("--epochs", default=1, show_default=True, type=int)
@click.option("--lr", "learning_rate", default=1e-4, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--batch-size", default=8, show_default=True, type=int)
@click.option("--val-fraction", default=0.1, show_default=True, type=float)
def train_cmd(trainset_path, out_dir, base_model, epochs, learning_rate, seed, batch_size, val_fraction):
    """Fine-tune on a trainset and print the train report as JSON."""
    config = TrainJobConfig(
        trainset_path=trainset_path,
        out_dir=out_dir,
        base_model=base_model,
        epochs=epochs,
        learning_rate=learning_rate,
        seed=seed,
        batch_size=batch_size,
        validation_fraction=val_fraction,
    )
    try:
        report = train(config)
    except TrainsetError as exc:
        click.echo(f"trainset error: {exc}", err=True)
        sys.exit(1)
    except TrainingDiverged as exc:
        click.echo(json.dumps(exc.report.to_json_dict(), indent=2), err=True)
        click.echo("training diverged (non-finite loss)", err=True)
        sys.exit(2)
    payload = report.to_json_dict()
    payload["loss_curve"] = payload["loss_curve"][-10:]  # keep stdout readable
    click.echo(json.dumps(payload, indent=2))


@main.command("serve")
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True))
@click.option("--port", default=8377, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve_cmd(model_dir, port, host):
    """Serve POST /score and GET /health for a trained model directory."""
    run_server(model_dir, port=port, host=host)


if __name__ == "__main__":
    main()
