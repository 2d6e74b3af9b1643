"""White-box coverage criteria over neuron activation traces.

Implements NC, KMNC, NBC, SNAC, TKNC plus the two surprise-coverage
criteria (likelihood- and distance-based).  Traces carry raw activations;
the training-time activation profile supplies per-neuron ranges and, for
surprise coverage, per-class training activation matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    EmptyClassTrainingSet,
    EmptyTrace,
    KTooLarge,
    NonFiniteInput,
    ProfileMismatch,
)

__all__ = [
    "ActivationTrace",
    "ActivationProfile",
    "CoverageScore",
    "nc",
    "kmnc",
    "nbc",
    "snac",
    "tknc",
    "lsc",
    "dsc",
]

# Features whose training variance falls below this are dropped before KDE,
# mirroring common surprise-adequacy practice.
KDE_VARIANCE_FLOOR = 1e-5


@dataclass(frozen=True)
class ActivationTrace:
    """Per-input, per-layer activation vectors.

    ``layers`` is an ordered (name, neuron_count) list and ``activations``
    one (n_inputs, neuron_count) array per layer.  An empty trace (no
    inputs) is representable; the structural criteria reject it, surprise
    coverage scores it as zero.
    """

    ids: tuple[str, ...]
    layers: tuple[tuple[str, int], ...]
    activations: tuple[np.ndarray, ...]

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        layers = tuple((str(name), int(w)) for name, w in self.layers)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate input ids in trace")
        if len(layers) != len(self.activations):
            raise ValueError("one activation array per layer required")
        acts = []
        for (name, width), arr in zip(layers, self.activations):
            arr = np.asarray(arr, dtype=np.float64).reshape(len(ids), width)
            if not np.isfinite(arr).all():
                raise NonFiniteInput(f"non-finite activations in layer {name!r}")
            acts.append(arr)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "activations", tuple(acts))

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def total_neurons(self) -> int:
        return sum(w for _, w in self.layers)

    def take(self, indices: Sequence[int]) -> "ActivationTrace":
        """Sub-trace of the given input rows (duplicates allowed)."""
        indices = list(indices)
        ids = tuple(f"{self.ids[i]}@{k}" for k, i in enumerate(indices))
        return ActivationTrace(
            ids, self.layers, tuple(a[indices] for a in self.activations)
        )

    def layer_index(self, name: str) -> int:
        for i, (layer_name, _) in enumerate(self.layers):
            if layer_name == name:
                return i
        raise ProfileMismatch(f"layer {name!r} not present in trace")


@dataclass(frozen=True)
class ActivationProfile:
    """Training-time activation state the coverage criteria compare against.

    ``lows``/``highs`` hold per-neuron activation minima/maxima observed
    during training, one vector per layer.  ``training`` optionally maps a
    layer name to its full training activation matrix and ``training_labels``
    carries one class label per training input; both are required only by
    the surprise criteria.
    """

    layers: tuple[tuple[str, int], ...]
    lows: tuple[np.ndarray, ...]
    highs: tuple[np.ndarray, ...]
    training: Mapping[str, np.ndarray] | None = None
    training_labels: np.ndarray | None = None

    def __post_init__(self):
        layers = tuple((str(name), int(w)) for name, w in self.layers)
        lows = tuple(
            np.asarray(v, dtype=np.float64).reshape(w)
            for v, (_, w) in zip(self.lows, layers)
        )
        highs = tuple(
            np.asarray(v, dtype=np.float64).reshape(w)
            for v, (_, w) in zip(self.highs, layers)
        )
        for (name, _), lo, hi in zip(layers, lows, highs):
            if np.any(lo > hi):
                raise ValueError(f"profile for layer {name!r} has low > high")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        if self.training_labels is not None:
            object.__setattr__(
                self,
                "training_labels",
                np.asarray(self.training_labels, dtype=np.int64),
            )

    @classmethod
    def from_training_trace(
        cls, trace: ActivationTrace, labels: Sequence[int] | None = None
    ) -> "ActivationProfile":
        """Profile with per-neuron min/max taken over a training trace."""
        if trace.n == 0:
            raise EmptyTrace("cannot profile an empty training trace")
        lows = tuple(a.min(axis=0) for a in trace.activations)
        highs = tuple(a.max(axis=0) for a in trace.activations)
        training = {name: a for (name, _), a in zip(trace.layers, trace.activations)}
        labels_arr = None if labels is None else np.asarray(labels, dtype=np.int64)
        return cls(trace.layers, lows, highs, training, labels_arr)

    def range_for(self, trace: ActivationTrace) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer (low, high) aligned with the trace's layers."""
        by_name = {name: i for i, (name, _) in enumerate(self.layers)}
        out = []
        for name, width in trace.layers:
            if name not in by_name:
                raise ProfileMismatch(f"profile is missing layer {name!r}")
            i = by_name[name]
            if self.layers[i][1] != width:
                raise ProfileMismatch(
                    f"layer {name!r}: trace width {width} != profile width "
                    f"{self.layers[i][1]}"
                )
            out.append((self.lows[i], self.highs[i]))
        return out

    def training_for(self, layer: str) -> np.ndarray:
        if self.training is None or layer not in self.training:
            raise ProfileMismatch(f"profile carries no training data for {layer!r}")
        if self.training_labels is None:
            raise ProfileMismatch("profile carries no training class labels")
        return np.asarray(self.training[layer], dtype=np.float64)


@dataclass(frozen=True)
class CoverageScore:
    criterion: str
    value: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"coverage must lie in [0, 1], got {self.value}")


def _require_nonempty(trace: ActivationTrace) -> None:
    if trace.n == 0:
        raise EmptyTrace("coverage needs at least one input")


def nc(trace: ActivationTrace, threshold: float = 0.1) -> CoverageScore:
    """Neuron coverage: share of neurons whose scaled activation exceeds
    ``threshold`` for at least one input.

    Activations are min-max scaled per layer, per input, before
    thresholding (the DeepXplore convention); a constant layer scales to 0.
    """
    _require_nonempty(trace)
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    covered = 0
    for arr in trace.activations:
        lo = arr.min(axis=1, keepdims=True)
        span = arr.max(axis=1, keepdims=True) - lo
        span[span == 0.0] = 1.0  # constant layer scales to all-zero
        scaled = (arr - lo) / span
        covered += int((scaled > threshold).any(axis=0).sum())
    return CoverageScore(
        "NC", covered / trace.total_neurons, {"threshold": threshold}
    )


def kmnc(trace: ActivationTrace, profile: ActivationProfile, k: int = 1000) -> CoverageScore:
    """k-multisection coverage of each neuron's training range.

    Each [low, high] splits into k equal buckets; activations outside the
    range cover nothing (that is corner-case territory).  Degenerate
    neurons (low == high) own a single coverable bucket, hit only by an
    activation exactly at that value.
    """
    _require_nonempty(trace)
    if k < 1:
        raise ValueError("k must be >= 1")
    ranges = profile.range_for(trace)
    covered = 0
    for arr, (lo, hi) in zip(trace.activations, ranges):
        span = hi - lo
        regular = span > 0.0
        if regular.any():
            a = arr[:, regular]
            low = lo[regular]
            width = span[regular]
            inside = (a >= low) & (a <= low + width)
            idx = np.floor((a - low) / width * k).astype(np.int64)
            np.clip(idx, 0, k - 1, out=idx)
            neuron = np.broadcast_to(
                np.arange(idx.shape[1]), idx.shape
            )
            keys = neuron[inside] * k + idx[inside]
            covered += int(np.unique(keys).size)
        if (~regular).any():
            hits = (arr[:, ~regular] == lo[~regular]).any(axis=0)
            covered += int(hits.sum())
    return CoverageScore(
        "KMNC", covered / (k * trace.total_neurons), {"k": k}
    )


def _corner_masks(
    trace: ActivationTrace, profile: ActivationProfile
) -> tuple[np.ndarray, np.ndarray]:
    lower_hits = []
    upper_hits = []
    for arr, (lo, hi) in zip(trace.activations, profile.range_for(trace)):
        lower_hits.append((arr < lo).any(axis=0))
        upper_hits.append((arr > hi).any(axis=0))
    return np.concatenate(lower_hits), np.concatenate(upper_hits)


def nbc(trace: ActivationTrace, profile: ActivationProfile) -> CoverageScore:
    """Neuron boundary coverage: covered corner regions over 2 * neurons."""
    _require_nonempty(trace)
    lower, upper = _corner_masks(trace, profile)
    covered = int(lower.sum()) + int(upper.sum())
    return CoverageScore("NBC", covered / (2 * trace.total_neurons), {})


def snac(trace: ActivationTrace, profile: ActivationProfile) -> CoverageScore:
    """Strong neuron activation coverage: upper corners only."""
    _require_nonempty(trace)
    _, upper = _corner_masks(trace, profile)
    return CoverageScore("SNAC", int(upper.sum()) / trace.total_neurons, {})


def tknc(trace: ActivationTrace, k: int = 3) -> CoverageScore:
    """Top-k neuron coverage: neurons ranking in their layer's top k for
    at least one input; activation ties break toward the lower index."""
    _require_nonempty(trace)
    if k < 1:
        raise ValueError("k must be >= 1")
    narrowest = min(w for _, w in trace.layers)
    if k > narrowest:
        raise KTooLarge(f"k={k} exceeds the narrowest layer width {narrowest}")
    covered = 0
    for arr in trace.activations:
        # argsort on -activation; stable sort breaks ties toward low index
        order = np.argsort(-arr, axis=1, kind="stable")
        covered += int(np.unique(order[:, :k]).size)
    return CoverageScore("TKNC", covered / trace.total_neurons, {"k": k})


def _bucketize(surprises: np.ndarray, upper_bound: float, n_buckets: int) -> float:
    """Share of [0, upper_bound] buckets holding at least one surprise.

    Values past either end clamp into the outermost bucket on that side.
    """
    if surprises.size == 0:
        return 0.0
    idx = np.floor(surprises / upper_bound * n_buckets)
    idx = np.clip(idx, 0, n_buckets - 1)
    return float(np.unique(idx.astype(np.int64)).size / n_buckets)


def _predicted_classes(
    trace: ActivationTrace, predicted: Sequence[int] | None
) -> np.ndarray:
    if predicted is not None:
        arr = np.asarray(predicted, dtype=np.int64)
        if arr.shape != (trace.n,):
            raise ValueError("one predicted class per trace input required")
        return arr
    # Convention: without explicit predictions, the last traced layer is
    # treated as the model output and argmax gives the predicted class.
    return np.argmax(trace.activations[-1], axis=1).astype(np.int64)


def lsc(
    trace: ActivationTrace,
    profile: ActivationProfile,
    layer: str,
    upper_bound: float,
    n_buckets: int = 1000,
    predicted: Sequence[int] | None = None,
) -> CoverageScore:
    """Likelihood-based surprise coverage at one layer.

    The surprise of a test input is -log of a Gaussian KDE of its layer
    activation vector against same-predicted-class training activations.
    The kernel is diagonal with Scott's factor n^(-1/(d+4)); near-constant
    training features (variance below 1e-5) are dropped first, and any
    remaining degenerate per-class variance falls back to 1.0, which also
    covers single-point classes.  Surprises bucketize over [0, upper_bound].
    """
    if upper_bound <= 0:
        raise ValueError("upper_bound must be positive")
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    train = profile.training_for(layer)
    labels = profile.training_labels
    if trace.n == 0:
        return CoverageScore(
            "LSC", 0.0, {"layer": layer, "upper_bound": upper_bound, "n_buckets": n_buckets}
        )
    test = trace.activations[trace.layer_index(layer)]
    classes = _predicted_classes(trace, predicted)

    keep = np.var(train, axis=0) >= KDE_VARIANCE_FLOOR
    kept = int(keep.sum())
    if kept == 0:
        # Degenerate profile: every feature near-constant; surprise is 0.
        surprises = np.zeros(trace.n)
    else:
        train_k = train[:, keep]
        test_k = test[:, keep]
        d = kept
        surprises = np.empty(trace.n)
        for cls in np.unique(classes):
            rows = train_k[labels == cls]
            if rows.shape[0] == 0:
                raise EmptyClassTrainingSet(f"no training activations for class {cls}")
            n_c = rows.shape[0]
            factor = n_c ** (-1.0 / (d + 4))
            var = rows.var(axis=0, ddof=1) if n_c >= 2 else np.ones(d)
            var = np.where(np.isfinite(var) & (var >= 1e-12), var, 1.0)
            h2 = (factor**2) * var
            log_norm = -0.5 * float(np.log(2.0 * math.pi * h2).sum())
            sel = classes == cls
            x = test_k[sel]
            # log density via logsumexp over kernel centers
            sq = ((x[:, None, :] - rows[None, :, :]) ** 2 / (2.0 * h2)).sum(axis=2)
            peak = (-sq).max(axis=1)
            log_dens = (
                peak
                + np.log(np.exp(-sq - peak[:, None]).sum(axis=1))
                + log_norm
                - math.log(n_c)
            )
            surprises[sel] = -log_dens
    value = _bucketize(surprises, upper_bound, n_buckets)
    return CoverageScore(
        "LSC",
        value,
        {
            "layer": layer,
            "upper_bound": upper_bound,
            "n_buckets": n_buckets,
            "kept_features": kept,
            "bandwidth": "scott-diagonal",
        },
    )


def dsc(
    trace: ActivationTrace,
    profile: ActivationProfile,
    layer: str,
    upper_bound: float,
    n_buckets: int = 1000,
    predicted: Sequence[int] | None = None,
) -> CoverageScore:
    """Distance-based surprise coverage at one layer.

    surprise(x) = |x - a| / |a - b| with a the nearest same-predicted-class
    training vector and b the nearest other-class training vector to a.
    A zero numerator gives surprise 0; a zero denominator alone clamps the
    surprise into the last bucket.
    """
    if upper_bound <= 0:
        raise ValueError("upper_bound must be positive")
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    train = profile.training_for(layer)
    labels = profile.training_labels
    if trace.n == 0:
        return CoverageScore(
            "DSC", 0.0, {"layer": layer, "upper_bound": upper_bound, "n_buckets": n_buckets}
        )
    test = trace.activations[trace.layer_index(layer)]
    classes = _predicted_classes(trace, predicted)
    surprises = np.empty(trace.n)
    for cls in np.unique(classes):
        same = train[labels == cls]
        other = train[labels != cls]
        if same.shape[0] == 0:
            raise EmptyClassTrainingSet(f"no training activations for class {cls}")
        if other.shape[0] == 0:
            raise EmptyClassTrainingSet(
                f"no training activations outside class {cls}"
            )
        sel = np.flatnonzero(classes == cls)
        x = test[sel]
        d_same = np.linalg.norm(x[:, None, :] - same[None, :, :], axis=2)
        nearest = np.argmin(d_same, axis=1)
        dist_a = d_same[np.arange(len(sel)), nearest]
        a = same[nearest]
        dist_b = np.linalg.norm(a[:, None, :] - other[None, :, :], axis=2).min(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(dist_a == 0.0, 0.0, dist_a / dist_b)
        surprises[sel] = s
    value = _bucketize(surprises, upper_bound, n_buckets)
    return CoverageScore(
        "DSC",
        value,
        {"layer": layer, "upper_bound": upper_bound, "n_buckets": n_buckets},
    )
