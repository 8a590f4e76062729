"""Deterministic CSV tables and flat metadata sidecars."""

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Mapping, Sequence

import numpy as np

FLOAT_FORMAT = ".17g"


def format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), FLOAT_FORMAT)
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    """Write a one-line header and the rows with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def write_columns(path: Path, columns: Mapping[str, Sequence[float]]) -> Path:
    header = list(columns)
    rows = zip(*[np.asarray(columns[name]) for name in header])
    return write_csv(path, header, list(rows))


def write_sidecar(path: Path, metadata: Mapping[str, Any]) -> Path:
    """Flat key-value JSON; floats are stored as 17-digit strings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flat: Dict[str, str] = {str(k): format_value(v) for k, v in metadata.items()}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(flat, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
