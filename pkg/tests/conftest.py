"""Shared fixtures: a synthetic texture corpus and a model trained on it."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from cskn.cli import run_command
from cskn.synthetic import make_texture_dataset

TEXTURE_CONFIG = """\
input_size = 64
seed = 0
color = gray
pyramid_levels = 1,2,3,6

[pretrain]
patches_per_epoch = 20000
epochs = 3
batch_size = 500

[layer1]
input = gradient
sub_patch_size = 1
subsampling_factor = 4
num_filters = 16
num_training_pairs = 30000

[layer2]
input = patch
sub_patch_size = 3
subsampling_factor = 2
num_filters = 64
num_training_pairs = 30000
"""

TINY_CONFIG = """\
input_size = 32
seed = 3
pyramid_levels = 1,2,3

[pretrain]
patches_per_epoch = 2000
epochs = 2
batch_size = 250

[layer1]
input = gradient
sub_patch_size = 1
subsampling_factor = 4
num_filters = 8
num_training_pairs = 4000

[layer2]
input = patch
sub_patch_size = 3
subsampling_factor = 2
num_filters = 12
num_training_pairs = 4000
"""


@dataclass(frozen=True)
class TextureRun:
    """Paths of a trained texture model and its inputs."""

    manifest: Path
    config: Path
    model: Path
    train_seconds: float


@pytest.fixture(scope="session")
def texture_manifest(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("textures")
    return make_texture_dataset(
        root,
        size=64,
        train_per_class=20,
        test_per_class=10,
        noise_sigma=0.1,
        seed=42,
    )


@pytest.fixture(scope="session")
def texture_model(tmp_path_factory, texture_manifest) -> TextureRun:
    """Train the two-layer texture model once per session via the CLI."""
    root = tmp_path_factory.mktemp("texture-model")
    config = root / "run.cfg"
    config.write_text(TEXTURE_CONFIG, encoding="utf-8")
    model = root / "model.cskn"
    started = time.perf_counter()
    status = run_command(
        [
            "train",
            "--config",
            str(config),
            "--manifest",
            str(texture_manifest),
            "--out",
            str(model),
        ]
    )
    elapsed = time.perf_counter() - started
    assert status == 0, "texture training failed"
    return TextureRun(
        manifest=texture_manifest,
        config=config,
        model=model,
        train_seconds=elapsed,
    )


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("tiny-textures")
    return make_texture_dataset(
        root,
        size=32,
        train_per_class=4,
        test_per_class=2,
        noise_sigma=0.1,
        seed=5,
    )
