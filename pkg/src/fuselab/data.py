"""Embedding dataset container and on-disk format.

One record = (id, class label, 768-d text vector, 384-d image vector).
The binary container is bit-exact: little-endian header, then per record a
length-prefixed UTF-8 id, a label byte, and the two float32 payloads.
Loading a saved file reproduces the dataset down to the float bits.
"""

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .errors import DimensionError, FormatError, InputError, IntegrityError, UnsupportedVersionError

TEXT_DIM = 768
IMAGE_DIM = 384
N_CLASSES = 3
LABEL_NAMES = ("negative", "neutral", "positive")
LABEL_TO_INDEX = {name: i for i, name in enumerate(LABEL_NAMES)}

MAGIC = b"MMEB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQIII")  # magic, version, n_records, text_dim, image_dim, n_classes


@dataclass
class EmbeddingRecord:
    id: str
    label: int
    text_vec: np.ndarray   # (768,) float32
    image_vec: np.ndarray  # (384,) float32

    def validate(self) -> "EmbeddingRecord":
        if not self.id:
            raise InputError("record id must be nonempty")
        if self.label not in range(N_CLASSES):
            raise InputError(f"record {self.id!r}: label {self.label} not in 0..{N_CLASSES - 1}")
        self.text_vec = _as_vector(self.text_vec, TEXT_DIM, f"record {self.id!r} text_vec")
        self.image_vec = _as_vector(self.image_vec, IMAGE_DIM, f"record {self.id!r} image_vec")
        return self


def _as_vector(v, dim: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float32).reshape(-1)
    if v.shape[0] != dim:
        raise DimensionError(f"{what}: expected length {dim}, got {v.shape[0]}")
    if not np.isfinite(v).all():
        raise InputError(f"{what}: non-finite entries")
    return v


@dataclass
class Dataset:
    records: List[EmbeddingRecord]
    source: Optional[str] = None
    text_dim: int = TEXT_DIM
    image_dim: int = IMAGE_DIM

    def __len__(self) -> int:
        return len(self.records)

    def validate(self) -> "Dataset":
        seen = set()
        for rec in self.records:
            rec.validate()
            if rec.id in seen:
                raise IntegrityError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
        return self

    def to_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(text (n,768) f32, image (n,384) f32, labels (n,) int64)."""
        n = len(self.records)
        xt = np.empty((n, self.text_dim), dtype=np.float32)
        xv = np.empty((n, self.image_dim), dtype=np.float32)
        y = np.empty(n, dtype=np.int64)
        for i, rec in enumerate(self.records):
            xt[i] = rec.text_vec
            xv[i] = rec.image_vec
            y[i] = rec.label
        return xt, xv, y


@dataclass
class SplitSpec:
    train: float
    val: float
    test: float
    seed: int = 42

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f <= 0 for f in fracs):
            raise InputError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise InputError(f"split fractions must sum to 1, got {sum(fracs)!r}")


def save_embeddings(dataset: Dataset, path: str) -> None:
    """Write the container deterministically (temp file, then rename)."""
    dataset.validate()
    blob = bytearray()
    blob += _HEADER.pack(MAGIC, FORMAT_VERSION, len(dataset.records),
                         dataset.text_dim, dataset.image_dim, N_CLASSES)
    for rec in dataset.records:
        id_bytes = rec.id.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise InputError(f"record id too long ({len(id_bytes)} bytes)")
        blob += struct.pack("<H", len(id_bytes))
        blob += id_bytes
        blob += struct.pack("<B", rec.label)
        blob += rec.text_vec.astype("<f4", copy=False).tobytes()
        blob += rec.image_vec.astype("<f4", copy=False).tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".mmeb-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_embeddings(path: str) -> Dataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(buf)} bytes)")
    magic, version, n_records, text_dim, image_dim, n_classes = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {version} unsupported (this build reads {FORMAT_VERSION})")
    if (text_dim, image_dim, n_classes) != (TEXT_DIM, IMAGE_DIM, N_CLASSES):
        raise FormatError(
            f"{path}: header dims ({text_dim}, {image_dim}, {n_classes}) unsupported, "
            f"expected ({TEXT_DIM}, {IMAGE_DIM}, {N_CLASSES})")
    offset = _HEADER.size
    vec_bytes = 4 * (text_dim + image_dim)
    records: List[EmbeddingRecord] = []
    seen = set()
    for i in range(n_records):
        if offset + 2 > len(buf):
            raise FormatError(f"{path}: truncated at record {i} (id length)")
        (id_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        if offset + id_len + 1 + vec_bytes > len(buf):
            raise FormatError(f"{path}: truncated at record {i}")
        rec_id = buf[offset:offset + id_len].decode("utf-8")
        offset += id_len
        label = buf[offset]
        offset += 1
        if label >= n_classes:
            raise FormatError(f"{path}: record {i} has label {label} >= {n_classes}")
        text_vec = np.frombuffer(buf, dtype="<f4", count=text_dim, offset=offset).copy()
        offset += 4 * text_dim
        image_vec = np.frombuffer(buf, dtype="<f4", count=image_dim, offset=offset).copy()
        offset += 4 * image_dim
        if rec_id in seen:
            raise IntegrityError(f"{path}: duplicate record id {rec_id!r}")
        seen.add(rec_id)
        records.append(EmbeddingRecord(rec_id, int(label), text_vec, image_vec))
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes after record {n_records - 1}")
    return Dataset(records, source=path, text_dim=text_dim, image_dim=image_dim)


def class_distribution(dataset: Dataset) -> np.ndarray:
    """Counts per class, indexed by label."""
    if not dataset.records:
        raise InputError("class_distribution: empty dataset")
    counts = np.zeros(N_CLASSES, dtype=np.int64)
    for rec in dataset.records:
        counts[rec.label] += 1
    return counts


def _allocate(n: int, fractions: Iterable[float]) -> List[int]:
    """Largest-remainder apportionment of n items; deviates from exact by < 1."""
    fractions = list(fractions)
    exact = [f * n for f in fractions]
    counts = [int(e) for e in exact]
    remainders = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in remainders[: n - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Per-class proportional split; deterministic given spec.seed.

    Splits are disjoint, exhaustive, and preserve the dataset's record order
    within each part.
    """
    dataset.validate()
    by_class: List[List[int]] = [[] for _ in range(N_CLASSES)]
    for i, rec in enumerate(dataset.records):
        by_class[rec.label].append(i)
    for label, members in enumerate(by_class):
        if len(members) < 3:
            raise InputError(
                f"class {LABEL_NAMES[label]} has only {len(members)} samples; need at least 3 to split")
    rng = np.random.default_rng(spec.seed)
    buckets: List[List[int]] = [[], [], []]
    for members in by_class:
        order = rng.permutation(len(members))
        counts = _allocate(len(members), (spec.train, spec.val, spec.test))
        cursor = 0
        for part, count in enumerate(counts):
            for j in order[cursor:cursor + count]:
                buckets[part].append(members[j])
            cursor += count
    out = []
    for part in buckets:
        part.sort()
        out.append(Dataset([dataset.records[i] for i in part], source=dataset.source))
    return out[0], out[1], out[2]
