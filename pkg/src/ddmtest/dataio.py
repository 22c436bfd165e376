"""CSV ingestion and JSON report serialization for the command-line tools.

The data format is deliberately minimal: a two-column CSV with header
``time,choice``, times as positive decimals printed at 9 significant
digits, choices 0 or 1.  Reports are JSON with a ``schema_version`` field
and deterministic key order, so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataValidationError
from .model import Dataset

__all__ = ["read_dataset_csv", "write_dataset_csv", "to_jsonable", "write_report", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1
CSV_HEADER = ["time", "choice"]


def read_dataset_csv(path, label=None) -> Dataset:
    """Read a ``time,choice`` CSV; errors name the offending row."""
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8-sig", newline="")
    except OSError as exc:
        raise DataValidationError(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file; expected header 'time,choice'")
        if [h.strip().lower() for h in header] != CSV_HEADER:
            raise DataValidationError(
                f"{path}: expected header 'time,choice', got {','.join(header)!r}"
            )
        times, choices = [], []
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise DataValidationError(f"{path}: row {i}: expected 2 fields, got {len(row)}")
            try:
                t = float(row[0])
            except ValueError:
                raise DataValidationError(f"{path}: row {i}: time {row[0]!r} is not a number")
            if not (math.isfinite(t) and t > 0.0):
                raise DataValidationError(f"{path}: row {i}: time must be finite and > 0, got {t}")
            c = row[1].strip()
            if c not in ("0", "1"):
                raise DataValidationError(f"{path}: row {i}: choice must be 0 or 1, got {row[1]!r}")
            times.append(t)
            choices.append(int(c))
    if not times:
        raise DataValidationError(f"{path}: no data rows")
    return Dataset(times, choices, label=label)


def write_dataset_csv(data: Dataset, path) -> None:
    """Write a dataset with times at 9 significant digits."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write("time,choice\n")
        for t, c in zip(data.times, data.choices):
            handle.write(f"{t:.9g},{int(c)}\n")


def to_jsonable(obj):
    """Recursively convert dataclasses/arrays/numpy scalars for json.dumps."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return [to_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(x) for x in obj]
    return obj


def write_report(payload: dict, path) -> None:
    """Serialize a report deterministically (sorted keys, fixed layout)."""
    body = dict(payload)
    body["schema_version"] = SCHEMA_VERSION
    text = json.dumps(to_jsonable(body), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")
