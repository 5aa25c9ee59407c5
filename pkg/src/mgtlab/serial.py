"""Deterministic on-disk formats: raw float64 arrays with JSON sidecars, and CSV tables.

Binary layout is little-endian float64, row-major (C order), no header; all
metadata lives in a `<name>.json` sidecar next to the payload. CSV floats are
written with `repr`, i.e. the shortest string that round-trips, so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "array_checksum",
    "write_array",
    "read_array",
    "write_csv",
    "write_json",
    "format_cell",
]


def array_checksum(arr: np.ndarray) -> str:
    """sha256 of the little-endian float64 row-major byte stream."""
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return hashlib.sha256(payload).hexdigest()


def write_array(path: str, arr: np.ndarray, meta: Mapping[str, Any] | None = None) -> str:
    """Write `arr` as raw <f8 bytes plus a JSON sidecar; returns the sidecar path."""
    path = os.fspath(path)
    arr = np.asarray(arr, dtype=float)
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(payload)
    sidecar = {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "order": "C",
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    if meta:
        sidecar.update(meta)
    sidecar_path = path + ".json"
    write_json(sidecar_path, sidecar)
    return sidecar_path


def read_array(path: str) -> tuple[np.ndarray, dict]:
    """Read an array written by `write_array`, verifying the checksum."""
    path = os.fspath(path)
    with open(path + ".json", "r") as fh:
        meta = json.load(fh)
    with open(path, "rb") as fh:
        payload = fh.read()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != meta["checksum"]:
        raise IOError(f"checksum mismatch for {path}")
    arr = np.frombuffer(payload, dtype="<f8").reshape(meta["shape"]).astype(float)
    return arr, meta


def format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


def write_json(path: str, obj: Any) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def ensure_dir(path: str) -> str:
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)
    return path
