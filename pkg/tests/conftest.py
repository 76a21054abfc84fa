"""Shared fixtures: one small synthetic dataset reused across test modules."""

from pathlib import Path

import numpy as np
import pytest

from emoshift.dataset import generate_toy_dataset, load_image
from emoshift.encoders import EncoderConfig


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """16 labeled 32x32 images (2 per emotion) with their manifest."""
    root = tmp_path_factory.mktemp("toy")
    records, manifest_path = generate_toy_dataset(root, n_per_class=2,
                                                  image_size=32, seed=0)
    images = {r.image_id: load_image(Path(root) / r.image_path) for r in records}
    return records, images, manifest_path


@pytest.fixture(scope="session")
def toy_encoder_config():
    """Stub encoder dims small enough for fast exact-gradient training."""
    return EncoderConfig(backend="toy_stub", d_t=32, visual_channels=64,
                         d=32, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
