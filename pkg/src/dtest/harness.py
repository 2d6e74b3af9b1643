"""Experiment harness: controlled class-diversity runs, repeated-sampling
correlation studies, and timing benchmarks over feature/trace data.

Reproducibility contract: every sample is drawn from a Philox-4x64 stream
keyed as (seed, size << 32 | repetition), so experiments that share a seed
and sampling spec enumerate identical subsets regardless of which metric
they evaluate.  All reports are plain dicts of JSON-serializable values.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .coverage import ActivationProfile, ActivationTrace, dsc, kmnc, lsc, nbc, nc, snac, tknc
from .diversity import geometric_diversity, ncd_multiset, std_norm
from .errors import ClassTooSmall, SpecInvalid, ZeroVariance
from .faults import FaultClustering, count_faults
from .matrix import FeatureMatrix, min_max_normalize
from .stats import spearman, wilcoxon_signed_rank

__all__ = [
    "SampleSpec",
    "sample_stream",
    "draw_indices",
    "rq1_class_diversity",
    "rq2_sample_and_correlate",
    "rq3_coverage_correlate",
    "rq5_metric_vs_metric",
    "rq4_bench",
    "evaluate_metric",
]

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class SampleSpec:
    """How to draw repeated samples from a population."""

    sizes: tuple[int, ...] = (100, 200, 300, 400, 1000)
    repetitions: int = 60
    seed: int = 0
    with_replacement: bool = True

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not sizes:
            raise SpecInvalid("sizes must be nonempty")
        if any(s < 1 for s in sizes):
            raise SpecInvalid("sizes must be positive")
        if self.repetitions < 2:
            raise SpecInvalid("repetitions must be >= 2")


def sample_stream(seed: int, word: int) -> np.random.Generator:
    """Independent counter-based stream for one (seed, word) pair."""
    key = np.array([seed & _MASK64, word & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _stream_for(seed: int, size: int, rep: int) -> np.random.Generator:
    return sample_stream(seed, ((size & _MASK32) << 32) | (rep & _MASK32))


def draw_indices(
    spec: SampleSpec, size: int, rep: int, population: int
) -> tuple[np.ndarray, np.random.Generator]:
    """Sample row indices for one repetition; returns the stream too so
    callers can draw further reproducible values tied to this sample."""
    if size > population and not spec.with_replacement:
        raise SpecInvalid(
            f"size {size} exceeds population {population} without replacement"
        )
    gen = _stream_for(spec.seed, size, rep)
    if spec.with_replacement:
        idx = gen.integers(0, population, size=size)
    else:
        idx = gen.permutation(population)[:size]
    return np.asarray(idx, dtype=np.int64), gen


def _submatrix(features: FeatureMatrix, indices: np.ndarray) -> FeatureMatrix:
    ids = tuple(f"{features.ids[i]}@{k}" for k, i in enumerate(indices))
    return FeatureMatrix(ids, features.values[indices], features.normalized)


def evaluate_metric(
    metric: dict,
    indices: np.ndarray,
    gen: np.random.Generator,
    features: FeatureMatrix | None = None,
    trace: ActivationTrace | None = None,
    profile: ActivationProfile | None = None,
    predicted: np.ndarray | None = None,
) -> float:
    """Evaluate one metric descriptor on one sample.

    Descriptors are dicts with a ``kind`` plus per-metric parameters:
    diversity kinds gd/std/ncd need ``features``; coverage kinds
    nc/kmnc/nbc/snac/tknc/lsc/dsc need ``trace`` (plus ``profile`` except
    for nc and tknc); kind ``random`` is a seeded control score drawn from
    the sample's own stream, independent of everything else; kind
    ``cluster_count`` scores a sample by the distinct non-noise clusters
    it touches in the descriptor's ``_clustering`` (a FaultClustering),
    the confounder-check mode for correlating whole-population data
    clusters against faults.
    """
    kind = metric["kind"].lower()
    if kind == "random":
        return float(gen.random())
    if kind == "cluster_count":
        aux = metric.get("_clustering")
        if aux is None:
            raise SpecInvalid("cluster_count needs a loaded '_clustering'")
        ids_source = features.ids if features is not None else (
            trace.ids if trace is not None else None
        )
        if ids_source is None:
            raise SpecInvalid("cluster_count needs features or a trace")
        return float(count_faults([ids_source[i] for i in indices], aux))
    if kind in ("gd", "std", "ncd"):
        if features is None:
            raise SpecInvalid(f"metric {kind} needs a feature matrix")
        sub = _submatrix(features, indices)
        if kind == "gd":
            return geometric_diversity(sub, auto_dedup=True).value
        if kind == "std":
            return std_norm(sub).value
        return ncd_multiset(
            sub,
            compressor=metric.get("compressor", "bzip2"),
            mode=metric.get("mode", "greedy"),
            exact_limit=int(metric.get("exact_limit", 12)),
        ).value
    if trace is None:
        raise SpecInvalid(f"metric {kind} needs an activation trace")
    sub = trace.take(indices)
    sub_predicted = None if predicted is None else predicted[indices]
    if kind == "nc":
        return nc(sub, float(metric.get("threshold", 0.1))).value
    if kind == "tknc":
        return tknc(sub, int(metric.get("k", 3))).value
    if profile is None:
        raise SpecInvalid(f"metric {kind} needs an activation profile")
    if kind == "kmnc":
        return kmnc(sub, profile, int(metric.get("k", 1000))).value
    if kind == "nbc":
        return nbc(sub, profile).value
    if kind == "snac":
        return snac(sub, profile).value
    if kind in ("lsc", "dsc"):
        fn = lsc if kind == "lsc" else dsc
        return fn(
            sub,
            profile,
            metric["layer"],
            float(metric["upper_bound"]),
            int(metric.get("n_buckets", 1000)),
            sub_predicted,
        ).value
    raise SpecInvalid(f"unknown metric kind {kind!r}")


def _normalize_once(features: FeatureMatrix) -> FeatureMatrix:
    # Population-wide normalization keeps per-sample scores comparable,
    # which the controlled experiments depend on; see README.
    return features if features.normalized else min_max_normalize(features)


def _corr_or_null(xs: Sequence[float], ys: Sequence[float]) -> dict | None:
    try:
        r = spearman(xs, ys)
    except ZeroVariance:
        return None
    return {
        "rho": r.rho,
        "p_value": r.p_value,
        "n": r.n,
        "significant": r.significant,
    }


# ---------------------------------------------------------------------------
# RQ1: controlled class diversity


def _stage_allocation(set_size: int, k: int) -> list[int]:
    base, extra = divmod(set_size, k)
    return [base + 1 if i < extra else base for i in range(k)]


def rq1_class_diversity(
    features: FeatureMatrix,
    class_labels: dict[str, int],
    set_size: int = 100,
    reps: int = 20,
    seed: int = 0,
    metrics: Sequence[str] = ("GD", "STD"),
    ncd_params: dict | None = None,
) -> dict:
    """Controlled-diversity procedure: grow the number of classes in
    fixed-size samples and record diversity at every stage.

    Starts from ``reps`` single-class samples of ``set_size`` and folds in
    one class per stage, keeping per-class counts uniform within 1.  The
    class order is seeded and shared by all repetitions; members kept at
    each stage are a random subset of the previous stage's members.
    """
    known = [i for i in features.ids if i in class_labels]
    if len(known) != len(features.ids):
        missing = next(i for i in features.ids if i not in class_labels)
        raise SpecInvalid(f"id {missing!r} has no class label")
    classes = sorted({class_labels[i] for i in features.ids})
    if set_size < len(classes):
        raise SpecInvalid("set_size must be >= number of classes")
    by_class: dict[int, list[int]] = {c: [] for c in classes}
    for row, fid in enumerate(features.ids):
        by_class[class_labels[fid]].append(row)
    smallest = min(len(v) for v in by_class.values())
    if smallest < set_size:
        raise ClassTooSmall(
            f"every class needs >= {set_size} members, smallest has {smallest}"
        )
    norm = _normalize_once(features)
    order_gen = sample_stream(seed, 0)
    class_order = [classes[i] for i in order_gen.permutation(len(classes))]

    metric_names = [m.upper() for m in metrics]
    ncd_params = ncd_params or {}

    def score(sub: FeatureMatrix, name: str) -> float:
        if name == "GD":
            return geometric_diversity(sub, auto_dedup=True).value
        if name == "STD":
            return std_norm(sub).value
        if name == "NCD":
            return ncd_multiset(sub, **ncd_params).value
        raise SpecInvalid(f"unknown rq1 metric {name!r}")

    # members[rep] maps class -> current row list
    members: list[dict[int, list[int]]] = []
    stages = []
    for k in range(1, len(class_order) + 1):
        new_class = class_order[k - 1]
        alloc = _stage_allocation(set_size, k)
        stage_scores = {name: [] for name in metric_names}
        histograms = []
        for rep in range(reps):
            gen = _stream_for(seed, k, rep + 1)
            if k == 1:
                pool = by_class[new_class]
                picks = gen.permutation(len(pool))[:set_size]
                members.append({new_class: [pool[i] for i in picks]})
            else:
                current = members[rep]
                kept: dict[int, list[int]] = {}
                for slot, cls in enumerate(class_order[: k - 1]):
                    target = alloc[slot]
                    rows = current[cls]
                    picks = gen.permutation(len(rows))[:target]
                    kept[cls] = [rows[i] for i in picks]
                pool = by_class[new_class]
                picks = gen.permutation(len(pool))[: alloc[k - 1]]
                kept[new_class] = [pool[i] for i in picks]
                members[rep] = kept
            rows = [r for cls in class_order[:k] for r in members[rep][cls]]
            sub = _submatrix(norm, np.array(rows))
            for name in metric_names:
                stage_scores[name].append(score(sub, name))
            histograms.append(sorted(len(v) for v in members[rep].values()))
        stages.append(
            {
                "k": k,
                "classes": class_order[:k],
                "scores": stage_scores,
                "class_histograms": histograms,
            }
        )
    return {
        "experiment": "rq1",
        "config": {
            "set_size": set_size,
            "repetitions": reps,
            "seed": seed,
            "metrics": metric_names,
        },
        "class_order": class_order,
        "stages": stages,
    }


# ---------------------------------------------------------------------------
# RQ2 / RQ3 / RQ5: repeated sampling + Spearman correlation


def _run_sampled(
    metrics: list[dict],
    spec: SampleSpec,
    population: int,
    features: FeatureMatrix | None,
    trace: ActivationTrace | None,
    profile: ActivationProfile | None,
    predicted: np.ndarray | None,
    clustering: FaultClustering | None,
    population_ids: tuple[str, ...],
) -> list[dict]:
    """Shared sampling loop.  Scores every metric on every sample and
    counts faults when a clustering is supplied."""
    out = []
    for size in spec.sizes:
        per_metric: list[list[float]] = [[] for _ in metrics]
        faults: list[int] = []
        sample_ids: list[list[str]] = []
        for rep in range(spec.repetitions):
            idx, gen = draw_indices(spec, size, rep, population)
            ids = [population_ids[i] for i in idx]
            sample_ids.append(ids)
            for slot, metric in enumerate(metrics):
                per_metric[slot].append(
                    evaluate_metric(
                        metric, idx, gen, features, trace, profile, predicted
                    )
                )
            if clustering is not None:
                faults.append(count_faults(ids, clustering))
        out.append(
            {
                "size": size,
                "scores": per_metric,
                "faults": faults if clustering is not None else None,
                "sample_ids": sample_ids,
            }
        )
    return out


def rq2_sample_and_correlate(
    features: FeatureMatrix,
    clustering: FaultClustering,
    metric: dict | str,
    spec: SampleSpec,
) -> dict:
    """Correlate a diversity metric with fault counts over random samples."""
    metric = {"kind": metric} if isinstance(metric, str) else dict(metric)
    norm = _normalize_once(features)
    known = set(features.ids)
    if not set(clustering.ids) <= known:
        raise SpecInvalid("clustering population must be a subset of feature ids")
    rows = _run_sampled(
        [metric], spec, norm.n, norm, None, None, None, clustering, norm.ids
    )
    results = []
    for row in rows:
        scores = row["scores"][0]
        results.append(
            {
                "metric": metric["kind"].upper(),
                "size": row["size"],
                "scores": scores,
                "faults": row["faults"],
                "spearman": _corr_or_null(scores, row["faults"]),
                "sample_ids": row["sample_ids"],
            }
        )
    return {
        "experiment": "rq2",
        "config": _spec_config(spec, metric=metric),
        "results": results,
    }


def rq3_coverage_correlate(
    trace: ActivationTrace,
    profile: ActivationProfile | None,
    clustering: FaultClustering,
    criterion: dict,
    spec: SampleSpec,
    predicted: np.ndarray | None = None,
) -> dict:
    """Same subsets as rq2 under the same seed; coverage score vs faults."""
    criterion = dict(criterion)
    if not set(clustering.ids) <= set(trace.ids):
        raise SpecInvalid("clustering population must be a subset of trace ids")
    rows = _run_sampled(
        [criterion], spec, trace.n, None, trace, profile, predicted, clustering,
        trace.ids,
    )
    results = []
    for row in rows:
        scores = row["scores"][0]
        results.append(
            {
                "metric": criterion["kind"].upper(),
                "size": row["size"],
                "scores": scores,
                "faults": row["faults"],
                "spearman": _corr_or_null(scores, row["faults"]),
                "sample_ids": row["sample_ids"],
            }
        )
    return {
        "experiment": "rq3",
        "config": _spec_config(spec, criterion=criterion),
        "results": results,
    }


def rq5_metric_vs_metric(
    metric_a: dict,
    metric_b: dict,
    spec: SampleSpec,
    features: FeatureMatrix | None = None,
    trace: ActivationTrace | None = None,
    profile: ActivationProfile | None = None,
    predicted: np.ndarray | None = None,
) -> dict:
    """Spearman correlation between two metrics over identical subsets."""
    metric_a = dict(metric_a)
    metric_b = dict(metric_b)
    norm = _normalize_once(features) if features is not None else None
    if norm is not None:
        population, ids = norm.n, norm.ids
    elif trace is not None:
        population, ids = trace.n, trace.ids
    else:
        raise SpecInvalid("rq5 needs features or a trace")
    if norm is not None and trace is not None and norm.ids != trace.ids:
        raise SpecInvalid("features and trace must list identical ids in order")
    rows = _run_sampled(
        [metric_a, metric_b], spec, population, norm, trace, profile, predicted,
        None, ids,
    )
    results = []
    for row in rows:
        a, b = row["scores"]
        results.append(
            {
                "metric_a": metric_a["kind"].upper(),
                "metric_b": metric_b["kind"].upper(),
                "size": row["size"],
                "scores_a": a,
                "scores_b": b,
                "spearman": _corr_or_null(a, b),
                "sample_ids": row["sample_ids"],
            }
        )
    return {
        "experiment": "rq5",
        "config": _spec_config(spec, metric_a=metric_a, metric_b=metric_b),
        "results": results,
    }


# ---------------------------------------------------------------------------
# RQ4: timing


def rq4_bench(
    metrics: list[dict],
    spec: SampleSpec,
    features: FeatureMatrix | None = None,
    trace: ActivationTrace | None = None,
    profile: ActivationProfile | None = None,
    predicted: np.ndarray | None = None,
    preprocessing_seconds: dict[str, float] | None = None,
) -> dict:
    """Wall-clock benchmark of metric evaluations over seeded samples.

    One warm-up evaluation per (metric, size) is excluded from the
    recorded times.  ``preprocessing_seconds`` adds a user-supplied
    constant per sample (reported-not-measured, e.g. external feature
    extraction) to the named metric's accounting.  Pairwise Wilcoxon
    signed-rank tests compare metrics over (size, repetition)-aligned
    totals.
    """
    metrics = [dict(m) for m in metrics]
    preprocessing_seconds = preprocessing_seconds or {}
    norm = _normalize_once(features) if features is not None else None
    if norm is not None:
        population = norm.n
    elif trace is not None:
        population = trace.n
    else:
        raise SpecInvalid("rq4 needs features or a trace")
    names = [m["kind"].upper() for m in metrics]
    table: dict[str, dict[int, list[float]]] = {name: {} for name in names}
    for metric, name in zip(metrics, names):
        extra = float(preprocessing_seconds.get(name, 0.0))
        for size in spec.sizes:
            times = []
            for rep in range(spec.repetitions):
                idx, gen = draw_indices(spec, size, rep, population)
                if rep == 0:  # warm-up evaluation, not recorded
                    evaluate_metric(metric, idx, gen, norm, trace, profile, predicted)
                    idx, gen = draw_indices(spec, size, rep, population)
                start = time.perf_counter()
                evaluate_metric(metric, idx, gen, norm, trace, profile, predicted)
                times.append(time.perf_counter() - start + extra)
            table[name][size] = times
    comparisons = []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a = [t for size in spec.sizes for t in table[names[i]][size]]
            b = [t for size in spec.sizes for t in table[names[j]][size]]
            try:
                w = wilcoxon_signed_rank(a, b)
                entry = {
                    "statistic": w.statistic,
                    "p_value": w.p_value,
                    "n_effective": w.n_effective,
                }
            except Exception:
                entry = None
            comparisons.append(
                {"metric_a": names[i], "metric_b": names[j], "wilcoxon": entry}
            )
    return {
        "experiment": "rq4",
        "config": _spec_config(
            spec, metrics=metrics, preprocessing_seconds=preprocessing_seconds
        ),
        "timings": {
            name: {str(size): times for size, times in sizes.items()}
            for name, sizes in table.items()
        },
        "wilcoxon": comparisons,
    }


def _public(value):
    """Strip loaded objects (underscore keys) from descriptor echoes."""
    if isinstance(value, dict):
        return {k: _public(v) for k, v in value.items() if not k.startswith("_")}
    if isinstance(value, list):
        return [_public(v) for v in value]
    return value


def _spec_config(spec: SampleSpec, **extra) -> dict:
    cfg = {
        "sizes": list(spec.sizes),
        "repetitions": spec.repetitions,
        "seed": spec.seed,
        "with_replacement": spec.with_replacement,
    }
    cfg.update({k: _public(v) for k, v in extra.items()})
    return cfg
