"""Command-line entry points for feature extraction and backbone export."""

import logging
import sys

import click

from .extract import TaskManifest, extract_features, model_hash_prefix


@click.command("extract")
@click.option("--task-manifest", "manifest_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False))
@click.option("--n", "n_samples", default=None, type=click.IntRange(min=1), help="Override manifest n_samples.")
@click.option("--seed", default=None, type=int, help="Override manifest seed.")
@click.option("--model", default=None, type=click.Path(exists=True, dir_okay=False), help="Override manifest model file.")
def extract(manifest_file, out, n_samples, seed, model):
    """Turn an image folder plus task manifest into a FEATM1 feature matrix."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        manifest = TaskManifest.from_json(manifest_file)
        if n_samples is not None:
            manifest.n_samples = n_samples
        if seed is not None:
            manifest.seed = seed
        if model is not None:
            manifest.model = model
        features = extract_features(manifest, out)
    except (ValueError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    click.echo(
        f"extracted {features.shape[0]}x{features.shape[1]} features for "
        f"{manifest.task_id!r} (seed={manifest.seed}, "
        f"extractor={model_hash_prefix(manifest.model)}) -> {out}"
    )


@click.command("export-backbone")
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False))
@click.option("--pretrained/--random-init", default=False, show_default=True,
              help="Load the reference ImageNet weights (needs download access).")
def export_backbone(out, pretrained):
    """Export the 34-layer residual backbone as TorchScript (512-d pooled output)."""
    try:
        import torch
        import torchvision
    except ImportError as e:
        click.echo(f"error: export needs torchvision installed ({e})", err=True)
        sys.exit(2)
    weights = torchvision.models.ResNet34_Weights.IMAGENET1K_V1 if pretrained else None
    model = torchvision.models.resnet34(weights=weights)
    model.fc = torch.nn.Identity()  # keep the 512 post-pooling activations
    model.eval()
    torch.jit.script(model).save(out)
    click.echo(f"exported backbone ({'pretrained' if pretrained else 'random init'}) "
               f"-> {out} ({model_hash_prefix(out)})")


if __name__ == "__main__":
    extract()
