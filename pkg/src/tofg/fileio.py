"""Deterministic JSON and CSV writing with atomic replace semantics.

All on-disk artifacts round-trip byte for byte when produced from the
same inputs: keys are sorted, floats use repr, and newlines are fixed.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "canonical_json",
    "to_plain",
    "write_json",
    "read_json",
    "write_csv",
    "write_text",
    "sha256_file",
]


def to_plain(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and stable float formatting."""
    return json.dumps(to_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_text(path, text: str) -> None:
    """Write text atomically: temp file in the same directory then replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj: Any) -> None:
    write_text(path, canonical_json(obj) + "\n")


def read_json(path) -> Any:
    with open(path, "r") as fh:
        return json.load(fh)


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, the one repr picks."""
    return repr(float(x))


def write_csv(path, header: list[str], rows: list[list[Any]]) -> None:
    """Write a CSV with deterministic float formatting."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                cells.append(format_float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    write_text(path, "\n".join(lines) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
