"""Writer (and verification reader) for the embedding container consumed by
the trainer:

    magic "MMEB" | version u32 LE = 1 | n_records u64 LE |
    text_dim u32 LE = 768 | image_dim u32 LE = 384 | n_classes u32 LE = 3
    per record: id_len u16 LE, id UTF-8, label u8,
                text_dim x f32 LE, image_dim x f32 LE

Byte-for-byte identical output for identical inputs.
"""

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import ExtractError

MAGIC = b"MMEB"
VERSION = 1
TEXT_DIM = 768
IMAGE_DIM = 384
N_CLASSES = 3
_HEADER = struct.Struct("<4sIQIII")


@dataclass
class Record:
    id: str
    label: int
    text_vec: np.ndarray
    image_vec: np.ndarray


def write_embedding_file(records: List[Record], path: str) -> None:
    blob = bytearray()
    blob += _HEADER.pack(MAGIC, VERSION, len(records), TEXT_DIM, IMAGE_DIM, N_CLASSES)
    for rec in records:
        text = np.ascontiguousarray(rec.text_vec, dtype="<f4")
        image = np.ascontiguousarray(rec.image_vec, dtype="<f4")
        if text.shape != (TEXT_DIM,) or image.shape != (IMAGE_DIM,):
            raise ExtractError(
                f"record {rec.id!r}: vector shapes {text.shape}/{image.shape}, "
                f"expected ({TEXT_DIM},)/({IMAGE_DIM},)")
        if not (np.isfinite(text).all() and np.isfinite(image).all()):
            raise ExtractError(f"record {rec.id!r}: non-finite embedding values")
        if not 0 <= rec.label < N_CLASSES:
            raise ExtractError(f"record {rec.id!r}: label {rec.label} out of range")
        encoded = rec.id.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", rec.label)
        blob += text.tobytes()
        blob += image.tobytes()
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


def read_embedding_file(path: str) -> List[Record]:
    """Strict reader used by the extractor's own round-trip tests."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise ExtractError(f"{path}: truncated header")
    magic, version, n_records, text_dim, image_dim, n_classes = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC or version != VERSION:
        raise ExtractError(f"{path}: bad magic/version {magic!r}/{version}")
    if (text_dim, image_dim, n_classes) != (TEXT_DIM, IMAGE_DIM, N_CLASSES):
        raise ExtractError(f"{path}: unexpected dims {(text_dim, image_dim, n_classes)}")
    records: List[Record] = []
    offset = _HEADER.size
    for i in range(n_records):
        (id_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        rec_id = buf[offset:offset + id_len].decode("utf-8")
        offset += id_len
        label = buf[offset]
        offset += 1
        text = np.frombuffer(buf, dtype="<f4", count=TEXT_DIM, offset=offset).copy()
        offset += 4 * TEXT_DIM
        image = np.frombuffer(buf, dtype="<f4", count=IMAGE_DIM, offset=offset).copy()
        offset += 4 * IMAGE_DIM
        records.append(Record(rec_id, int(label), text, image))
    if offset != len(buf):
        raise ExtractError(f"{path}: trailing bytes")
    return records
