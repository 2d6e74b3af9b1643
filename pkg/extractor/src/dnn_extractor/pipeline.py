"""The three extraction pipelines behind extract.py."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_dataset
from .nets import load_model_under_test, load_vgg16, trace_layers, vgg_features
from .writers import (
    write_atrc,
    write_embedding_csv,
    write_features_csv,
    write_fmat,
    write_outcomes_csv,
    write_profile_json,
    write_sidecar,
)


def resolve_output_dir(base) -> Path:
    """Use the directory if empty or missing, otherwise version it
    (base-v2, base-v3, ...) so runs never overwrite each other."""
    base = Path(base)
    if not base.exists() or not any(base.iterdir()):
        base.mkdir(parents=True, exist_ok=True)
        return base
    k = 2
    while True:
        candidate = base.with_name(f"{base.name}-v{k}")
        if not candidate.exists():
            candidate.mkdir(parents=True)
            return candidate
        k += 1


def run_features(config: dict) -> dict:
    """Images -> VGG-16 feature matrix (FMAT1 + CSV + sidecar)."""
    dataset = load_dataset(config["dataset"])
    if len(dataset) == 0:
        raise ValueError("dataset holds no images")
    fx = config.get("feature_extractor", {})
    seed = int(fx.get("seed", 0))
    batch = int(config.get("batch_size", 32))
    model = load_vgg16(fx.get("weights"), seed)
    values = vgg_features(model, dataset.images, batch)
    out = resolve_output_dir(config["output_dir"])
    write_fmat(out / "features.fmat", dataset.ids, values)
    write_features_csv(out / "features.csv", dataset.ids, values)
    write_sidecar(
        out / "features.meta.json",
        {
            "tool": f"dnn-extractor {__version__}",
            "arch": "vgg16",
            "weights": fx.get("weights") or "random-init",
            "seed": seed,
            "feature_layer": "features (conv stack) + global average pool",
            "preprocessing": "float [0,1], grayscale replicated to RGB, "
            "bilinear upscale to >= 32 px per side",
            "rows": len(dataset),
            "features": int(values.shape[1]),
        },
    )
    return {
        "output_dir": str(out),
        "features_fmat": str(out / "features.fmat"),
        "features_csv": str(out / "features.csv"),
        "rows": len(dataset),
        "features": int(values.shape[1]),
    }


def run_traces(config: dict) -> dict:
    """Model under test -> training profile + test trace + outcomes."""
    train = load_dataset(config["train_dataset"])
    test = load_dataset(config["test_dataset"])
    if train.labels is None or test.labels is None:
        raise ValueError("traces need labelled train and test datasets")
    layer_names = list(config.get("trace_layers") or [])
    if not layer_names:
        raise ValueError("config needs a nonempty trace_layers list")
    batch = int(config.get("batch_size", 32))
    model = load_model_under_test(config["model"])

    layers, train_arrays, _train_preds = trace_layers(
        model, layer_names, train.images, batch
    )
    _, test_arrays, test_preds = trace_layers(model, layer_names, test.images, batch)

    out = resolve_output_dir(config["output_dir"])
    write_atrc(out / "train.atrc", train.ids, layers, train_arrays)
    write_atrc(out / "test.atrc", test.ids, layers, test_arrays)
    lows = [a.min(axis=0) for a in train_arrays]
    highs = [a.max(axis=0) for a in train_arrays]
    write_profile_json(
        out / "profile.json",
        layers,
        lows,
        highs,
        {name: "train.atrc" for name, _ in layers},
        train.labels,
    )
    write_outcomes_csv(out / "outcomes.csv", test.ids, test.labels, test_preds)
    write_sidecar(
        out / "traces.meta.json",
        {
            "tool": f"dnn-extractor {__version__}",
            "model": config["model"],
            "trace_layers": [[name, width] for name, width in layers],
            "conv_reduction": "per-channel spatial mean",
            "train_rows": len(train),
            "test_rows": len(test),
        },
    )
    return {
        "output_dir": str(out),
        "train_trace": str(out / "train.atrc"),
        "test_trace": str(out / "test.atrc"),
        "profile": str(out / "profile.json"),
        "outcomes": str(out / "outcomes.csv"),
        "layers": [[name, width] for name, width in layers],
    }


def _read_features_file(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(5)
    if magic == b"FMAT1":
        import struct

        data = path.read_bytes()
        n, m = struct.unpack_from("<II", data, 5)
        pos = 13
        ids = []
        for _ in range(n):
            end = data.index(b"\x00", pos)
            ids.append(data[pos:end].decode("utf-8"))
            pos = end + 1
        values = np.frombuffer(data, dtype="<f8", count=n * m, offset=pos)
        return ids, values.reshape(n, m).astype(np.float64)
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        next(reader)
        ids, rows = [], []
        for row in reader:
            if row:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
    return ids, np.array(rows, dtype=np.float64)


def _pca_embed(values: np.ndarray, dims: int) -> np.ndarray:
    centered = values - values.mean(axis=0)
    cov = centered.T @ centered / max(values.shape[0] - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:dims]
    components = eigvecs[:, order]
    for j in range(components.shape[1]):
        pivot = int(np.argmax(np.abs(components[:, j])))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    return centered @ components


def run_embed(config: dict) -> dict:
    """Feature matrix -> n x dims embedding CSV with a seed sidecar."""
    ids, values = _read_features_file(config["features"])
    params = config.get("embedding", {})
    dims = int(params.get("dims", 2))
    if not 1 <= dims <= values.shape[1]:
        raise ValueError(f"dims must lie in [1, {values.shape[1]}]")
    seed = int(params.get("seed", 0))
    method = params.get("method")
    if method is None:
        try:
            import umap  # noqa: F401

            method = "umap"
        except ImportError:
            method = "pca"
    if method == "umap":
        try:
            import umap
        except ImportError as exc:
            raise ValueError(
                "method 'umap' needs the umap-learn package; use method 'pca' "
                "or install the 'umap' extra"
            ) from exc
        reducer = umap.UMAP(
            n_components=dims,
            n_neighbors=int(params.get("neighbors", 15)),
            min_dist=float(params.get("min_dist", 0.1)),
            random_state=seed,
        )
        coords = np.asarray(reducer.fit_transform(values), dtype=np.float64)
    elif method == "pca":
        coords = _pca_embed(values, dims)
    else:
        raise ValueError(f"unknown embedding method {method!r}")
    out = resolve_output_dir(config["output_dir"])
    write_embedding_csv(out / "embedding.csv", ids, coords)
    write_sidecar(
        out / "embedding.meta.json",
        {
            "tool": f"dnn-extractor {__version__}",
            "method": method,
            "dims": dims,
            "seed": seed,
            "neighbors": int(params.get("neighbors", 15)),
            "min_dist": float(params.get("min_dist", 0.1)),
            "rows": len(ids),
        },
    )
    return {
        "output_dir": str(out),
        "embedding": str(out / "embedding.csv"),
        "sidecar": str(out / "embedding.meta.json"),
        "method": method,
        "rows": len(ids),
        "dims": dims,
    }


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    return doc
