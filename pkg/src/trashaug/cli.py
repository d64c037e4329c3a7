"""Command line entry point: `pipeline <step> --config <file> [...]`."""

from __future__ import annotations

import json
import sys

import click

from . import dataset, pipeline


def _fail(exc: Exception):
    record = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(record), err=True)
    sys.exit(1)


def _load(config_path, workspace, seed):
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    config = pipeline.load_config(config_path, overrides)
    ws = workspace or config.get("workspace")
    if not ws:
        raise pipeline.PipelineError("no workspace: pass --workspace or set it in the config")
    return config, ws


@click.group()
def main():
    """Dataset-augmentation pipeline: two-stage VAE generation, quality
    filtering and classifier evaluation."""


def _step_command(step):
    @click.option("--config", "config_path", required=True, type=click.Path(exists=True))
    @click.option("--workspace", type=click.Path(), default=None)
    @click.option("--seed", type=int, default=None)
    def cmd(config_path, workspace, seed):
        try:
            config, ws = _load(config_path, workspace, seed)
            entry = pipeline.run_step(step, config, ws)
            click.echo(json.dumps(entry))
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            _fail(exc)

    cmd.__name__ = step.replace("-", "_")
    return cmd


for _step in pipeline.STEP_ORDER:
    if _step in ("ingest", "augment", "label-serve"):
        continue
    main.command(name=_step)(_step_command(_step))


@main.command(name="ingest")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--workspace", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--class", "class_label", default=None, help="standalone mode: class label")
@click.option("--src", type=click.Path(exists=True), default=None, help="standalone mode: image dir")
@click.option("--size", type=int, default=128, help="standalone mode: target edge")
@click.option("--out", type=click.Path(), default=None, help="standalone mode: output dir")
def ingest_cmd(config_path, workspace, seed, class_label, src, size, out):
    """Pipeline ingest step, or standalone with --class/--src/--size/--out."""
    try:
        if src is not None:
            if not (class_label and out):
                raise pipeline.PipelineError("standalone ingest needs --class, --src and --out")
            result = dataset.ingest(src, class_label, (size, size), out)
            result.manifest.save(f"{out}/manifest.jsonl")
            click.echo(
                json.dumps({"ingested": len(result.manifest), "skipped": result.skipped})
            )
            return
        config, ws = _load(config_path, workspace, seed)
        click.echo(json.dumps(pipeline.run_step("ingest", config, ws)))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command(name="augment")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--workspace", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--target-count", type=int, default=None)
def augment_cmd(config_path, workspace, seed, manifest_path, out, target_count):
    """Pipeline augment step, or standalone with --manifest/--out."""
    try:
        if manifest_path is not None:
            if not out:
                raise pipeline.PipelineError("standalone augment needs --out")
            manifest = dataset.DatasetManifest.load(manifest_path)
            augmented = dataset.augment(manifest, out)
            if target_count is not None and target_count < len(augmented):
                augmented = dataset.subsample(augmented, target_count, seed)
            augmented.save(f"{out}/manifest.jsonl")
            click.echo(json.dumps({"augmented": len(augmented)}))
            return
        config, ws = _load(config_path, workspace, seed if seed else None)
        click.echo(json.dumps(pipeline.run_step("augment", config, ws)))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command(name="label-serve")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--workspace", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--interactive", is_flag=True, help="run the HTTP labeling service")
def label_serve_cmd(config_path, workspace, seed, interactive):
    """Scripted auto-labeling step, or the interactive HTTP service."""
    try:
        config, ws = _load(config_path, workspace, seed)
        if interactive or not config["labeling"].get("auto"):
            pipeline.serve_labels(config, ws)
            return
        click.echo(json.dumps(pipeline.run_step("label-serve", config, ws)))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command(name="run-all")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--workspace", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def run_all_cmd(config_path, workspace, seed):
    """Run every step in order (auto-labeling must be configured)."""
    try:
        config, ws = _load(config_path, workspace, seed)
        for entry in pipeline.run_all(config, ws):
            click.echo(json.dumps(entry))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command(name="replay")
@click.option("--workspace", required=True, type=click.Path(exists=True))
def replay_cmd(workspace):
    """Re-run every recorded step from scratch (reproducibility check)."""
    try:
        for entry in pipeline.replay(workspace):
            click.echo(json.dumps(entry))
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


if __name__ == "__main__":
    main()
