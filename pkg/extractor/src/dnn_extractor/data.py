"""Dataset loading: .npz bundles or an image directory with labels.csv."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image


class Dataset:
    """Images as float32 arrays in [0, 1], shape (n, h, w, 3)."""

    def __init__(self, ids, images, labels):
        self.ids = list(ids)
        self.images = np.asarray(images, dtype=np.float32)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ValueError("images must be (n, h, w, 3) after loading")
        if len(self.ids) != self.images.shape[0]:
            raise ValueError("one id per image required")

    def __len__(self):
        return len(self.ids)


def _to_rgb01(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype == np.uint8:
        x = x.astype(np.float32) / 255.0
    else:
        x = x.astype(np.float32)
    if x.ndim == 3:  # (n, h, w) grayscale
        x = x[..., None]
    if x.shape[-1] == 1:  # replicate channels
        x = np.repeat(x, 3, axis=-1)
    return x


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.is_dir():
        return _load_image_dir(path)
    if path.suffix == ".npz":
        return _load_npz(path)
    raise ValueError(f"unsupported dataset path {path} (need .npz or a directory)")


def _load_npz(path: Path) -> Dataset:
    bundle = np.load(path, allow_pickle=False)
    if "x" not in bundle:
        raise ValueError(f"{path} lacks an 'x' array")
    images = _to_rgb01(bundle["x"])
    labels = bundle["y"] if "y" in bundle else None
    if "ids" in bundle:
        ids = [str(v) for v in bundle["ids"]]
    else:
        ids = [f"{path.stem}-{i}" for i in range(images.shape[0])]
    return Dataset(ids, images, labels)


def _load_image_dir(path: Path) -> Dataset:
    labels_file = path / "labels.csv"
    labels_map = {}
    if labels_file.exists():
        with open(labels_file, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["id", "label"]:
                raise ValueError(f"{labels_file} must have header id,label")
            for row in reader:
                if row:
                    labels_map[row[0]] = int(row[1])
    files = sorted(
        p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not files:
        raise ValueError(f"no images found in {path}")
    ids, images, labels = [], [], []
    for f in files:
        with Image.open(f) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        ids.append(f.stem)
        images.append(arr)
        if labels_map:
            if f.stem not in labels_map:
                raise ValueError(f"{labels_file} lacks a label for {f.stem!r}")
            labels.append(labels_map[f.stem])
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"images in {path} have mixed shapes: {sorted(shapes)}")
    return Dataset(ids, _to_rgb01(np.stack(images)), labels or None)
