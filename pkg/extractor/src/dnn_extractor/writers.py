"""Writers for the core toolkit's file formats.

Implemented against the documented formats (not by importing the core),
so the files themselves are the contract.  All writes are atomic:
content goes to a temp file in the target directory, then os.replace.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

FMAT_MAGIC = b"FMAT1"
ATRC_MAGIC = b"ATRC1"


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _num(x: float) -> str:
    return repr(float(x))


def write_fmat(path, ids, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f8")
    n, m = values.shape
    parts = [FMAT_MAGIC, struct.pack("<II", n, m)]
    for rid in ids:
        parts.append(str(rid).encode("utf-8") + b"\x00")
    parts.append(values.tobytes())
    _atomic_write_bytes(Path(path), b"".join(parts))


def write_features_csv(path, ids, values: np.ndarray) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["id"] + [f"f{j}" for j in range(values.shape[1])])
    for rid, row in zip(ids, values):
        writer.writerow([rid] + [_num(v) for v in row])
    _atomic_write_text(Path(path), buf.getvalue())


def write_atrc(path, ids, layers, activations) -> None:
    """layers: [(name, width)]; activations: one (n, width) array per layer."""
    n = len(ids)
    parts = [ATRC_MAGIC, struct.pack("<II", n, len(layers))]
    for name, width in layers:
        encoded = str(name).encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack("<I", int(width)))
    for rid in ids:
        parts.append(str(rid).encode("utf-8") + b"\x00")
    stacked = np.hstack([np.asarray(a, dtype="<f4") for a in activations])
    parts.append(np.ascontiguousarray(stacked, dtype="<f4").tobytes())
    _atomic_write_bytes(Path(path), b"".join(parts))


def write_profile_json(path, layers, lows, highs, training_refs, class_labels) -> None:
    neurons = []
    for (name, width), lo, hi in zip(layers, lows, highs):
        for j in range(int(width)):
            neurons.append(
                {"layer": name, "index": j, "low": float(lo[j]), "high": float(hi[j])}
            )
    doc = {"neurons": neurons}
    if training_refs:
        doc["layer_training_refs"] = dict(training_refs)
        doc["class_labels"] = [int(v) for v in class_labels]
    _atomic_write_text(Path(path), json.dumps(doc, sort_keys=True, indent=1) + "\n")


def write_outcomes_csv(path, ids, actual, predicted) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["id", "actual", "predicted"])
    for rid, a, p in zip(ids, actual, predicted):
        writer.writerow([rid, int(a), int(p)])
    _atomic_write_text(Path(path), buf.getvalue())


def write_embedding_csv(path, ids, coords: np.ndarray) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["id"] + [f"x{j}" for j in range(coords.shape[1])])
    for rid, row in zip(ids, coords):
        writer.writerow([rid] + [_num(v) for v in row])
    _atomic_write_text(Path(path), buf.getvalue())


def write_sidecar(path, payload: dict) -> None:
    _atomic_write_text(Path(path), json.dumps(payload, sort_keys=True, indent=1) + "\n")
