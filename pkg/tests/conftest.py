import numpy as np
import pytest

from fuselab.data import Dataset, EmbeddingRecord, IMAGE_DIM, TEXT_DIM


def make_separable(sizes=(22, 21, 21), offset=2.0, noise=1.0, seed=0,
                   prefix="s") -> Dataset:
    """Synthetic dataset: class c has mean (c-1)*offset in every coordinate of
    both modality spaces, unit-variance Gaussian noise."""
    rng = np.random.default_rng(seed)
    records = []
    for label, count in enumerate(sizes):
        shift = (label - 1) * offset
        for i in range(count):
            records.append(EmbeddingRecord(
                id=f"{prefix}-{label}-{i}",
                label=label,
                text_vec=(shift + noise * rng.standard_normal(TEXT_DIM)).astype(np.float32),
                image_vec=(shift + noise * rng.standard_normal(IMAGE_DIM)).astype(np.float32),
            ))
    return Dataset(records)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset():
    return make_separable(sizes=(8, 8, 8), seed=3)
