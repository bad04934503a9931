"""Manifest -> embedding file orchestration.

Rows with unreadable images are skipped and logged; everything else is a hard
error. Record order matches manifest order among the successful rows, and
re-running the same manifest with the same encoders yields a byte-identical
file.
"""

import logging
from dataclasses import dataclass
from typing import List

from .embedfile import Record, write_embedding_file
from .encoders import ImageEncoder, TextEncoder, load_image
from .errors import ExtractError, ImageError
from .manifest import ManifestRow, read_manifest

logger = logging.getLogger("mmextract")


@dataclass
class ExtractResult:
    written: int
    skipped: int
    out_path: str


def extract_rows(rows: List[ManifestRow], text_encoder: TextEncoder,
                 image_encoder: ImageEncoder, batch_size: int = 16) -> List[Record]:
    if batch_size < 1:
        raise ExtractError(f"batch size must be >= 1, got {batch_size}")
    usable, images = [], []
    for row in rows:
        try:
            images.append(load_image(row.image_path))
        except ImageError as exc:
            logger.warning("skipping row %r: %s", row.id, exc)
            continue
        usable.append(row)
    if not usable:
        raise ExtractError("no extractable rows: every image failed to decode")
    records: List[Record] = []
    for start in range(0, len(usable), batch_size):
        chunk = usable[start:start + batch_size]
        text_vecs = text_encoder.encode([r.text for r in chunk])
        image_vecs = image_encoder.encode(images[start:start + batch_size])
        for row, tv, iv in zip(chunk, text_vecs, image_vecs):
            records.append(Record(row.id, row.label, tv, iv))
    return records


def extract_manifest(manifest_path: str, out_path: str, text_encoder: TextEncoder,
                     image_encoder: ImageEncoder, batch_size: int = 16) -> ExtractResult:
    rows = read_manifest(manifest_path)
    records = extract_rows(rows, text_encoder, image_encoder, batch_size)
    write_embedding_file(records, out_path)
    skipped = len(rows) - len(records)
    if skipped:
        logger.warning("skipped %d of %d rows", skipped, len(rows))
    return ExtractResult(written=len(records), skipped=skipped, out_path=out_path)
