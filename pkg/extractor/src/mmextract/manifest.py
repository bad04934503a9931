"""Manifest ingestion: CSV with header `id,text,image_path,label`, labels in
{negative, neutral, positive}."""

import csv
from dataclasses import dataclass
from typing import List

from .errors import ManifestError

LABEL_TO_INDEX = {"negative": 0, "neutral": 1, "positive": 2}
REQUIRED_COLUMNS = ("id", "text", "image_path", "label")


@dataclass
class ManifestRow:
    id: str
    text: str
    image_path: str
    label: int


def read_manifest(path: str) -> List[ManifestRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise ManifestError(f"{path}: empty manifest")
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"{path}: missing columns {missing} (header {header})")
        rows: List[ManifestRow] = []
        seen = set()
        for line_no, raw in enumerate(reader, start=2):
            row_id = (raw["id"] or "").strip()
            if not row_id:
                raise ManifestError(f"{path}:{line_no}: empty id")
            if row_id in seen:
                raise ManifestError(f"{path}:{line_no}: duplicate id {row_id!r}")
            seen.add(row_id)
            text = (raw["text"] or "").strip()
            if not text:
                raise ManifestError(f"{path}:{line_no}: empty text for id {row_id!r}")
            label_name = (raw["label"] or "").strip()
            if label_name not in LABEL_TO_INDEX:
                raise ManifestError(
                    f"{path}:{line_no}: label {label_name!r} not in {sorted(LABEL_TO_INDEX)}")
            image_path = (raw["image_path"] or "").strip()
            if not image_path:
                raise ManifestError(f"{path}:{line_no}: empty image_path for id {row_id!r}")
            rows.append(ManifestRow(row_id, text, image_path, LABEL_TO_INDEX[label_name]))
    if not rows:
        raise ManifestError(f"{path}: no data rows")
    return rows
