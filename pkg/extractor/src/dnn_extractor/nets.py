"""Model plumbing: the VGG-16 feature extractor, a small builtin CNN for
tracing demos/tests, TorchScript loading, and batched inference helpers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torchvision

# VGG's five pooling stages need at least 32 px on each side.
MIN_SIDE = 32


def preprocess(images: np.ndarray) -> torch.Tensor:
    """(n, h, w, 3) float [0,1] -> (n, 3, H, W) with H, W >= 32.

    Smaller images are upscaled bilinearly (e.g. 28x28 grayscale sets are
    resized to 32 and channel-replicated upstream); this choice is recorded
    in the output sidecar rather than claimed as canonical.
    """
    x = torch.from_numpy(np.ascontiguousarray(images)).permute(0, 3, 1, 2)
    h, w = x.shape[2], x.shape[3]
    if h < MIN_SIDE or w < MIN_SIDE:
        x = torch.nn.functional.interpolate(
            x,
            size=(max(h, MIN_SIDE), max(w, MIN_SIDE)),
            mode="bilinear",
            align_corners=False,
        )
    return x


def load_vgg16(weights_path: str | None, seed: int) -> nn.Module:
    """Pretrained weights from a local file when given; otherwise a seeded
    random initialization (downloads are not assumed to be possible)."""
    torch.manual_seed(seed)
    model = torchvision.models.vgg16(weights=None)
    if weights_path:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


class SmallConvNet(nn.Module):
    """Tiny CNN used as a traceable model-under-test in demos and tests."""

    def __init__(self, num_classes: int, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.conv1 = nn.Conv2d(3, 8, 3)
        self.conv2 = nn.Conv2d(8, 16, 3)
        self.pool = nn.MaxPool2d(2)
        self.fc1 = nn.Linear(16 * 6 * 6, 32)
        self.fc2 = nn.Linear(32, num_classes)

    def forward(self, x):
        x = self.pool(torch.relu(self.conv1(x)))
        x = self.pool(torch.relu(self.conv2(x)))
        x = torch.flatten(x, 1)
        x = torch.relu(self.fc1(x))
        return self.fc2(x)


def load_model_under_test(spec: dict) -> nn.Module:
    if "torchscript" in spec:
        model = torch.jit.load(spec["torchscript"], map_location="cpu")
        model.eval()
        return model
    if spec.get("builtin") == "smallcnn":
        model = SmallConvNet(int(spec.get("num_classes", 10)), int(spec.get("seed", 0)))
        model.eval()
        return model
    raise ValueError("model spec needs 'torchscript' or builtin 'smallcnn'")


def vgg_features(model: nn.Module, images: np.ndarray, batch_size: int) -> np.ndarray:
    """512 features per image: the convolutional stack's output, globally
    average-pooled over the spatial dims."""
    x = preprocess(images)
    out = []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            feats = model.features(x[i : i + batch_size])
            pooled = torch.nn.functional.adaptive_avg_pool2d(feats, 1)
            out.append(torch.flatten(pooled, 1))
    return torch.cat(out).double().numpy()


def trace_layers(
    model: nn.Module, layer_names: list[str], images: np.ndarray, batch_size: int
) -> tuple[list[tuple[str, int]], list[np.ndarray], np.ndarray]:
    """Capture named submodule outputs as per-neuron activation vectors.

    Convolutional outputs (B, C, H, W) are reduced to per-channel spatial
    means (one neuron per filter); 2-D outputs are taken as-is.  Returns
    (layers, per-layer activation arrays, predicted classes from the
    model's final output).
    """
    modules = dict(model.named_modules())
    missing = [n for n in layer_names if n not in modules]
    if missing:
        raise ValueError(f"model has no layer(s) {missing} (got {sorted(modules)[1:]})")
    captured: dict[str, list[torch.Tensor]] = {n: [] for n in layer_names}
    hooks = []

    def grab(name):
        def hook(_module, _inputs, output):
            if output.ndim == 4:
                output = output.mean(dim=(2, 3))
            elif output.ndim != 2:
                output = torch.flatten(output, 1)
            captured[name].append(output.detach())

        return hook

    for name in layer_names:
        hooks.append(modules[name].register_forward_hook(grab(name)))
    x = preprocess(images)
    preds = []
    try:
        with torch.no_grad():
            for i in range(0, x.shape[0], batch_size):
                logits = model(x[i : i + batch_size])
                preds.append(torch.argmax(logits, dim=1))
    finally:
        for h in hooks:
            h.remove()
    layers = []
    arrays = []
    for name in layer_names:
        arr = torch.cat(captured[name]).double().numpy()
        layers.append((name, arr.shape[1]))
        arrays.append(arr)
    return layers, arrays, torch.cat(preds).numpy()
