import csv

import numpy as np
import pytest
from PIL import Image

from mmextract.encoders import ImageEncoder, TextEncoder

LABELS = ("negative", "neutral", "positive")


def make_image(path, seed, size=(96, 72)):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, (size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(base, "RGB").save(path)
    return str(path)


def write_manifest(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "text", "image_path", "label"])
        writer.writerows(rows)
    return str(path)


@pytest.fixture(scope="session")
def text_encoder():
    return TextEncoder.seeded_random(seed=11)


@pytest.fixture(scope="session")
def image_encoder():
    return ImageEncoder.seeded_random(seed=12)


@pytest.fixture(scope="session")
def sample_images(tmp_path_factory):
    root = tmp_path_factory.mktemp("imgs")
    return [make_image(root / f"img{i}.png", seed=100 + i) for i in range(6)]


@pytest.fixture
def sample_manifest(tmp_path, sample_images):
    rows = [(f"row-{i}", f"sample caption number {i}", img, LABELS[i % 3])
            for i, img in enumerate(sample_images)]
    return write_manifest(tmp_path / "manifest.csv", rows)
