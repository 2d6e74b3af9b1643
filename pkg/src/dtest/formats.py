"""File formats: feature matrices (CSV / FMAT1), activation traces (ATRC1),
activation profiles (JSON), embeddings, outcomes, cluster assignments.

Every reader validates structure and reports the first defect with a line
number or byte offset; every writer is the exact inverse of its reader
(write -> read round-trips bit-exactly for all value-carrying fields).
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .coverage import ActivationProfile, ActivationTrace
from .errors import MalformedFile
from .faults import Embedding, OutcomeTable
from .matrix import FeatureMatrix

__all__ = [
    "read_features",
    "write_features_csv",
    "write_features_fmat",
    "read_trace",
    "write_trace",
    "read_profile",
    "write_profile",
    "read_embedding",
    "write_embedding",
    "read_outcomes",
    "write_outcomes",
    "read_clusters",
    "write_clusters",
    "read_labels",
    "read_sample_ids",
    "read_value_column",
    "validate_file",
]

FMAT_MAGIC = b"FMAT1"
ATRC_MAGIC = b"ATRC1"


def _fmt(x: float) -> str:
    return repr(float(x))


def _csv_guard(fn, path):
    """Run a CSV-parsing thunk, converting parser/encoding noise into
    MalformedFile."""
    try:
        return fn()
    except (csv.Error, UnicodeDecodeError) as exc:
        raise MalformedFile(f"not parseable as CSV: {exc}", path=str(path)) from None


# ---------------------------------------------------------------------------
# Feature matrices


def read_features(path) -> FeatureMatrix:
    """Load a feature matrix from CSV or FMAT1 (sniffed by magic bytes)."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(5)
    if head == FMAT_MAGIC:
        return _read_features_fmat(path)
    return _read_features_csv(path)


def _read_features_csv(path: Path) -> FeatureMatrix:
    return _csv_guard(lambda: _read_features_csv_inner(path), path)


def _read_features_csv_inner(path: Path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedFile("empty CSV", path=str(path), line=1) from None
        if not header or header[0] != "id":
            raise MalformedFile(
                "feature CSV header must start with 'id'", path=str(path), line=1
            )
        m = len(header) - 1
        if m < 1:
            raise MalformedFile("no feature columns", path=str(path), line=1)
        ids: list[str] = []
        seen: set[str] = set()
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != m + 1:
                raise MalformedFile(
                    f"expected {m + 1} fields, got {len(row)}",
                    path=str(path),
                    line=lineno,
                )
            rid = row[0]
            if rid in seen:
                raise MalformedFile(
                    f"duplicate id {rid!r}", path=str(path), line=lineno
                )
            seen.add(rid)
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                raise MalformedFile(
                    "non-numeric feature value", path=str(path), line=lineno
                ) from None
            if not all(math.isfinite(v) for v in values):
                raise MalformedFile(
                    "non-finite feature value", path=str(path), line=lineno
                )
            ids.append(rid)
            rows.append(values)
        if not ids:
            raise MalformedFile("no data rows", path=str(path), line=2)
    return FeatureMatrix(tuple(ids), np.array(rows, dtype=np.float64))


def write_features_csv(matrix: FeatureMatrix, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"f{j}" for j in range(matrix.m)])
        for rid, row in zip(matrix.ids, matrix.values):
            writer.writerow([rid] + [_fmt(v) for v in row])


def _read_features_fmat(path: Path) -> FeatureMatrix:
    data = path.read_bytes()
    if data[:5] != FMAT_MAGIC:
        raise MalformedFile("bad FMAT1 magic", path=str(path), offset=0)
    if len(data) < 13:
        raise MalformedFile("truncated FMAT1 header", path=str(path), offset=5)
    n, m = struct.unpack_from("<II", data, 5)
    pos = 13
    ids = []
    for i in range(n):
        end = data.find(b"\x00", pos)
        if end < 0:
            raise MalformedFile(
                f"unterminated id #{i}", path=str(path), offset=pos
            )
        try:
            ids.append(data[pos:end].decode("utf-8"))
        except UnicodeDecodeError:
            raise MalformedFile(
                f"id #{i} is not valid UTF-8", path=str(path), offset=pos
            ) from None
        pos = end + 1
    need = n * m * 8
    if len(data) - pos != need:
        raise MalformedFile(
            f"expected {need} bytes of float64 data, found {len(data) - pos}",
            path=str(path),
            offset=pos,
        )
    values = np.frombuffer(data, dtype="<f8", count=n * m, offset=pos)
    values = values.reshape(n, m).astype(np.float64)
    if not np.isfinite(values).all():
        raise MalformedFile("non-finite feature value", path=str(path), offset=pos)
    try:
        return FeatureMatrix(tuple(ids), values)
    except ValueError as exc:
        raise MalformedFile(str(exc), path=str(path)) from None


def write_features_fmat(matrix: FeatureMatrix, path) -> None:
    path = Path(path)
    parts = [FMAT_MAGIC, struct.pack("<II", matrix.n, matrix.m)]
    for rid in matrix.ids:
        parts.append(rid.encode("utf-8") + b"\x00")
    parts.append(np.ascontiguousarray(matrix.values, dtype="<f8").tobytes())
    path.write_bytes(b"".join(parts))


# ---------------------------------------------------------------------------
# Activation traces


def read_trace(path) -> ActivationTrace:
    path = Path(path)
    data = path.read_bytes()
    if data[:5] != ATRC_MAGIC:
        raise MalformedFile("bad ATRC1 magic", path=str(path), offset=0)
    if len(data) < 13:
        raise MalformedFile("truncated ATRC1 header", path=str(path), offset=5)
    n, n_layers = struct.unpack_from("<II", data, 5)
    pos = 13
    layers = []
    for li in range(n_layers):
        if pos + 4 > len(data):
            raise MalformedFile("truncated layer table", path=str(path), offset=pos)
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + name_len + 4 > len(data):
            raise MalformedFile("truncated layer entry", path=str(path), offset=pos)
        try:
            name = data[pos : pos + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedFile(
                f"layer #{li} name is not valid UTF-8", path=str(path), offset=pos
            ) from None
        pos += name_len
        (width,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if width < 1:
            raise MalformedFile(
                f"layer {name!r} has zero width", path=str(path), offset=pos - 4
            )
        layers.append((name, width))
    ids = []
    for i in range(n):
        end = data.find(b"\x00", pos)
        if end < 0:
            raise MalformedFile(f"unterminated id #{i}", path=str(path), offset=pos)
        ids.append(data[pos:end].decode("utf-8"))
        pos = end + 1
    per_input = sum(w for _, w in layers)
    need = n * per_input * 4
    if len(data) - pos != need:
        raise MalformedFile(
            f"expected {need} bytes of float32 data, found {len(data) - pos}",
            path=str(path),
            offset=pos,
        )
    flat = np.frombuffer(data, dtype="<f4", count=n * per_input, offset=pos)
    flat = flat.reshape(n, per_input).astype(np.float64)
    if not np.isfinite(flat).all():
        raise MalformedFile("non-finite activation", path=str(path), offset=pos)
    arrays = []
    col = 0
    for _, width in layers:
        arrays.append(flat[:, col : col + width])
        col += width
    try:
        return ActivationTrace(tuple(ids), tuple(layers), tuple(arrays))
    except ValueError as exc:
        raise MalformedFile(str(exc), path=str(path)) from None


def write_trace(trace: ActivationTrace, path) -> None:
    path = Path(path)
    parts = [ATRC_MAGIC, struct.pack("<II", trace.n, len(trace.layers))]
    for name, width in trace.layers:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack("<I", width))
    for rid in trace.ids:
        parts.append(rid.encode("utf-8") + b"\x00")
    stacked = np.hstack([a for a in trace.activations]) if trace.layers else np.zeros((trace.n, 0))
    parts.append(np.ascontiguousarray(stacked, dtype="<f4").tobytes())
    path.write_bytes(b"".join(parts))


# ---------------------------------------------------------------------------
# Activation profiles


def read_profile(path) -> ActivationProfile:
    """Profile JSON: per-neuron ranges plus optional training-trace refs.

    ``layer_training_refs`` maps a layer name to an ATRC1 path (relative
    paths resolve against the profile's directory); ``class_labels`` holds
    one training-input class per row of those traces.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"invalid JSON: {exc}", path=str(path)) from None
    if not isinstance(doc, dict) or "neurons" not in doc:
        raise MalformedFile("profile must be an object with 'neurons'", path=str(path))
    per_layer: dict[str, dict[int, tuple[float, float]]] = {}
    order: list[str] = []
    for i, neuron in enumerate(doc["neurons"]):
        try:
            layer = str(neuron["layer"])
            index = int(neuron["index"])
            low = float(neuron["low"])
            high = float(neuron["high"])
        except (KeyError, TypeError, ValueError):
            raise MalformedFile(
                f"neuron entry #{i} must carry layer/index/low/high",
                path=str(path),
            ) from None
        if low > high:
            raise MalformedFile(
                f"neuron entry #{i} has low > high", path=str(path)
            )
        if layer not in per_layer:
            per_layer[layer] = {}
            order.append(layer)
        if index in per_layer[layer]:
            raise MalformedFile(
                f"duplicate neuron index {index} in layer {layer!r}", path=str(path)
            )
        per_layer[layer][index] = (low, high)
    layers = []
    lows = []
    highs = []
    for layer in order:
        entries = per_layer[layer]
        width = max(entries) + 1
        if set(entries) != set(range(width)):
            raise MalformedFile(
                f"layer {layer!r} neuron indices must cover 0..{width - 1}",
                path=str(path),
            )
        layers.append((layer, width))
        lows.append(np.array([entries[j][0] for j in range(width)]))
        highs.append(np.array([entries[j][1] for j in range(width)]))
    training = None
    labels = None
    refs = doc.get("layer_training_refs") or {}
    if refs:
        training = {}
        cache: dict[str, ActivationTrace] = {}
        for layer, ref in refs.items():
            ref_path = Path(ref)
            if not ref_path.is_absolute():
                ref_path = path.parent / ref_path
            key = str(ref_path)
            if key not in cache:
                cache[key] = read_trace(ref_path)
            trace = cache[key]
            try:
                li = trace.layer_index(str(layer))
            except Exception:
                raise MalformedFile(
                    f"training trace {ref!r} lacks layer {layer!r}", path=str(path)
                ) from None
            training[str(layer)] = trace.activations[li]
        counts = {a.shape[0] for a in training.values()}
        if "class_labels" not in doc:
            raise MalformedFile(
                "layer_training_refs requires class_labels", path=str(path)
            )
        labels = np.asarray(doc["class_labels"], dtype=np.int64)
        if len(counts) != 1 or labels.shape[0] != counts.pop():
            raise MalformedFile(
                "class_labels length must match training trace rows", path=str(path)
            )
    try:
        return ActivationProfile(tuple(layers), tuple(lows), tuple(highs), training, labels)
    except ValueError as exc:
        raise MalformedFile(str(exc), path=str(path)) from None


def write_profile(
    profile: ActivationProfile,
    path,
    layer_training_refs: dict[str, str] | None = None,
) -> None:
    """Serialize ranges (and optional refs) to profile JSON.

    Training matrices themselves live in ATRC1 files; pass their paths via
    ``layer_training_refs``.
    """
    path = Path(path)
    neurons = []
    for (layer, width), lo, hi in zip(profile.layers, profile.lows, profile.highs):
        for j in range(width):
            neurons.append(
                {"layer": layer, "index": j, "low": float(lo[j]), "high": float(hi[j])}
            )
    doc: dict = {"neurons": neurons}
    if layer_training_refs:
        doc["layer_training_refs"] = dict(layer_training_refs)
        if profile.training_labels is None:
            raise ValueError("refs given but profile has no training labels")
        doc["class_labels"] = [int(v) for v in profile.training_labels]
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Small CSV carriers


def _read_id_value_csv(path, expected_header, n_values, kind):
    path = Path(path)
    return _csv_guard(lambda: _read_id_value_csv_inner(path, expected_header, n_values, kind), path)


def _read_id_value_csv_inner(path, expected_header, n_values, kind):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedFile("empty CSV", path=str(path), line=1) from None
        if header[: len(expected_header)] != expected_header:
            raise MalformedFile(
                f"{kind} header must start with {','.join(expected_header)}",
                path=str(path),
                line=1,
            )
        rows = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if n_values is not None and len(row) != n_values + 1:
                raise MalformedFile(
                    f"expected {n_values + 1} fields", path=str(path), line=lineno
                )
            if row[0] in seen:
                raise MalformedFile(
                    f"duplicate id {row[0]!r}", path=str(path), line=lineno
                )
            seen.add(row[0])
            rows.append((lineno, row))
        if not rows:
            raise MalformedFile("no data rows", path=str(path), line=2)
    return rows


def read_embedding(path) -> Embedding:
    path = Path(path)
    return _csv_guard(lambda: _read_embedding_inner(path), path)


def _read_embedding_inner(path: Path) -> Embedding:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id" or len(header) < 2:
            raise MalformedFile(
                "embedding header must be id,x0,...", path=str(path), line=1
            )
        d = len(header) - 1
        ids, coords = [], []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise MalformedFile(
                    f"expected {d + 1} fields", path=str(path), line=lineno
                )
            if row[0] in seen:
                raise MalformedFile(
                    f"duplicate id {row[0]!r}", path=str(path), line=lineno
                )
            seen.add(row[0])
            try:
                coords.append([float(v) for v in row[1:]])
            except ValueError:
                raise MalformedFile(
                    "non-numeric coordinate", path=str(path), line=lineno
                ) from None
            ids.append(row[0])
        if not ids:
            raise MalformedFile("no data rows", path=str(path), line=2)
    try:
        return Embedding(tuple(ids), np.array(coords, dtype=np.float64), "precomputed")
    except ValueError as exc:
        raise MalformedFile(str(exc), path=str(path)) from None


def write_embedding(embedding: Embedding, path) -> None:
    path = Path(path)
    d = embedding.coordinates.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"x{j}" for j in range(d)])
        for rid, row in zip(embedding.ids, embedding.coordinates):
            writer.writerow([rid] + [_fmt(v) for v in row])


def read_outcomes(path) -> OutcomeTable:
    rows = _read_id_value_csv(path, ["id", "actual", "predicted"], 2, "outcomes")
    ids, actual, predicted = [], [], []
    for lineno, row in rows:
        try:
            actual.append(int(row[1]))
            predicted.append(int(row[2]))
        except ValueError:
            raise MalformedFile(
                "classes must be integers", path=str(path), line=lineno
            ) from None
        ids.append(row[0])
    return OutcomeTable(tuple(ids), np.array(actual), np.array(predicted))


def write_outcomes(outcomes: OutcomeTable, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "actual", "predicted"])
        for rid, a, p in zip(outcomes.ids, outcomes.actual, outcomes.predicted):
            writer.writerow([rid, int(a), int(p)])


def read_clusters(path) -> tuple[tuple[str, ...], np.ndarray]:
    rows = _read_id_value_csv(path, ["id", "cluster"], 1, "clusters")
    ids, labels = [], []
    for lineno, row in rows:
        try:
            labels.append(int(row[1]))
        except ValueError:
            raise MalformedFile(
                "cluster must be an integer", path=str(path), line=lineno
            ) from None
        if labels[-1] < -1:
            raise MalformedFile(
                "cluster labels are >= -1", path=str(path), line=lineno
            )
        ids.append(row[0])
    return tuple(ids), np.array(labels, dtype=np.int64)


def write_clusters(ids, labels, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "cluster"])
        for rid, label in zip(ids, labels):
            writer.writerow([rid, int(label)])


def read_labels(path) -> dict[str, int]:
    """Class labels CSV: header id,label."""
    rows = _read_id_value_csv(path, ["id", "label"], 1, "labels")
    out = {}
    for lineno, row in rows:
        try:
            out[row[0]] = int(row[1])
        except ValueError:
            raise MalformedFile(
                "label must be an integer", path=str(path), line=lineno
            ) from None
    return out


def read_sample_ids(path) -> list[str]:
    """One input id per line; blank lines ignored."""
    path = Path(path)
    ids = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    ids = [i for i in ids if i]
    if not ids:
        raise MalformedFile("no sample ids", path=str(path), line=1)
    return ids


def read_value_column(path) -> np.ndarray:
    """Plain numeric column: one float per line (no header)."""
    path = Path(path)
    values = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise MalformedFile(
                f"non-numeric value {line!r}", path=str(path), line=lineno
            ) from None
    if not values:
        raise MalformedFile("no values", path=str(path), line=1)
    return np.array(values, dtype=np.float64)


# ---------------------------------------------------------------------------
# Validation entry point


def validate_file(path, kind: str | None = None) -> dict:
    """Parse ``path`` as one of the known formats and return a summary.

    With ``kind=None`` the format is inferred: magic bytes for the binary
    formats, extension + header for the text ones.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if kind is None:
        kind = _infer_kind(path)
    if kind == "features":
        m = read_features(path)
        return {"kind": kind, "rows": m.n, "features": m.m}
    if kind == "trace":
        t = read_trace(path)
        return {
            "kind": kind,
            "inputs": t.n,
            "layers": [[name, width] for name, width in t.layers],
        }
    if kind == "profile":
        p = read_profile(path)
        return {
            "kind": kind,
            "layers": [[name, width] for name, width in p.layers],
            "has_training": p.training is not None,
        }
    if kind == "embedding":
        e = read_embedding(path)
        return {"kind": kind, "rows": e.n, "dims": int(e.coordinates.shape[1])}
    if kind == "outcomes":
        o = read_outcomes(path)
        return {
            "kind": kind,
            "rows": len(o.ids),
            "mispredicted": int(o.mispredicted.sum()),
        }
    if kind == "clusters":
        ids, labels = read_clusters(path)
        return {
            "kind": kind,
            "rows": len(ids),
            "clusters": len({int(v) for v in labels if v >= 0}),
            "noise": int((labels == -1).sum()),
        }
    raise MalformedFile(f"unknown format kind {kind!r}", path=str(path))


def _infer_kind(path: Path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(5)
    if head == FMAT_MAGIC:
        return "features"
    if head == ATRC_MAGIC:
        return "trace"
    if path.suffix == ".json":
        return "profile"
    if path.suffix == ".csv":
        def head():
            with open(path, newline="", encoding="utf-8") as fh:
                return next(csv.reader(fh), None) or []

        header = _csv_guard(head, path)
        if header[:2] == ["id", "cluster"]:
            return "clusters"
        if header[:3] == ["id", "actual", "predicted"]:
            return "outcomes"
        if header[:2] == ["id", "x0"]:
            return "embedding"
        if header and header[0] == "id":
            return "features"
    raise MalformedFile("cannot infer file kind", path=str(path))
