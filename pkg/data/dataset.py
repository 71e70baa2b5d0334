import json
import logging
import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config.config import FEATURE_HEADER_SIZE, FEATURE_MAGIC
from config.interfaces import (
    ArgumentError,
    DatasetLoadError,
    FeatureIndexError,
    FeatureMagicError,
    FeatureTruncatedError,
    RecordFormatError,
)

logger = logging.getLogger("diffcap.data")


class CaptionRecord(BaseModel):
    """One image: its reference captions and the feature rows holding its condition vectors."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    key: str
    captions: list[str] = Field(min_length=1, max_length=5)
    feature_row: int = Field(ge=0)
    text_feature_row: Optional[int] = Field(None, ge=0)

    @field_validator("captions")
    @classmethod
    def captions_non_empty(cls, captions: list[str]) -> list[str]:
        if any(not c.strip() for c in captions):
            raise ValueError("captions must be non-empty strings")
        return captions

    def to_json(self) -> str:
        return json.dumps(self.model_dump(exclude_none=True), ensure_ascii=False, sort_keys=True)


@dataclass(frozen=True)
class FeatureFile:
    rows: np.ndarray

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def to_bytes(self) -> bytes:
        header = FEATURE_MAGIC + struct.pack("<II", self.count, self.dim)
        return header + np.ascontiguousarray(self.rows, dtype="<f4").tobytes()

    def save(self, path: str | Path):
        Path(path).write_bytes(self.to_bytes())


def parse_feature_file(raw: bytes) -> FeatureFile:
    if len(raw) < FEATURE_HEADER_SIZE:
        raise FeatureTruncatedError(f"feature file has {len(raw)} bytes, header needs {FEATURE_HEADER_SIZE}")
    if raw[:4] != FEATURE_MAGIC:
        raise FeatureMagicError(f"bad feature file magic {raw[:4]!r}")
    count, dim = struct.unpack("<II", raw[4:FEATURE_HEADER_SIZE])
    expected = FEATURE_HEADER_SIZE + 4 * count * dim
    if len(raw) != expected:
        raise FeatureTruncatedError(f"feature file declares {count}x{dim} rows ({expected} bytes) but has {len(raw)}")
    rows = np.frombuffer(raw, dtype="<f4", offset=FEATURE_HEADER_SIZE).reshape(count, dim).copy()
    return FeatureFile(rows=rows)


def read_feature_file(path: str | Path) -> FeatureFile:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise DatasetLoadError(f"feature file not found: {path}")
    return parse_feature_file(raw)


def read_records(jsonl_path: str | Path) -> list[CaptionRecord]:
    records = []
    try:
        lines = Path(jsonl_path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise DatasetLoadError(f"caption file not found: {jsonl_path}")
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(CaptionRecord.model_validate_json(line))
        except ValidationError as e:
            raise RecordFormatError(f"{jsonl_path}:{line_no}: {e.errors()[0]['msg']}") from e
    return records


def write_records(records: list[CaptionRecord], jsonl_path: str | Path):
    text = "".join(r.to_json() + "\n" for r in records)
    Path(jsonl_path).write_text(text, encoding="utf-8")


def check_rows(records: list[CaptionRecord], features: FeatureFile):
    for record in records:
        for row in (record.feature_row, record.text_feature_row):
            if row is not None and row >= features.count:
                raise FeatureIndexError(f"record {record.key!r} references row {row}, file has {features.count}")


def load_dataset(jsonl_path: str | Path, feature_path: str | Path) -> tuple[list[CaptionRecord], FeatureFile]:
    """
    Load caption records and the feature file they index into.

    Args:
        jsonl_path: one CaptionRecord JSON object per line
        feature_path: CDLF feature file

    Returns:
        tuple: (records, features)
    """
    features = read_feature_file(feature_path)
    records = read_records(jsonl_path)
    check_rows(records, features)
    logger.debug(f"Loaded {len(records)} records and {features.count}x{features.dim} features")
    return records, features


def split(records: list, val_fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic shuffle-and-cut into (train, val); both sides must be non-empty."""
    if not 0.0 < val_fraction < 1.0:
        raise ArgumentError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    order = list(range(len(records)))
    random.Random(seed).shuffle(order)
    n_val = int(round(len(records) * val_fraction))
    if n_val == 0 or n_val == len(records):
        raise ArgumentError(f"split of {len(records)} records at {val_fraction} leaves one side empty")
    val_idx = set(order[:n_val])
    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    return train, val
