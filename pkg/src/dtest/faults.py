"""Fault estimation: cluster mispredicted inputs, count faults in samples.

Pipeline pieces: append the (actual, predicted) class pair to the feature
matrix, reduce dimensionality (PCA here; nonlinear embeddings are ingested
precomputed), run HDBSCAN over mutual-reachability distances, validate the
clustering with silhouette and DBCV, and count the distinct non-noise
clusters a sample touches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from .errors import (
    DimsTooLarge,
    EmptySet,
    NotMispredicted,
    SingleCluster,
    TooFewPoints,
)
from .matrix import FeatureMatrix

__all__ = [
    "OutcomeTable",
    "Embedding",
    "FaultClustering",
    "augment_features",
    "pca_embed",
    "hdbscan",
    "silhouette",
    "dbcv",
    "count_faults",
    "sweep",
]


@dataclass(frozen=True)
class OutcomeTable:
    """Per-input actual and predicted class; a row is mispredicted iff
    the two disagree."""

    ids: tuple[str, ...]
    actual: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        actual = np.asarray(self.actual, dtype=np.int64)
        predicted = np.asarray(self.predicted, dtype=np.int64)
        if actual.shape != (len(ids),) or predicted.shape != (len(ids),):
            raise ValueError("one actual and one predicted class per id required")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in outcome table")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "actual", actual)
        object.__setattr__(self, "predicted", predicted)

    @property
    def mispredicted(self) -> np.ndarray:
        return self.actual != self.predicted

    def lookup(self, input_id: str) -> tuple[int, int]:
        try:
            i = self.ids.index(input_id)
        except ValueError:
            raise KeyError(f"id {input_id!r} not in outcome table") from None
        return int(self.actual[i]), int(self.predicted[i])


@dataclass(frozen=True)
class Embedding:
    ids: tuple[str, ...]
    coordinates: np.ndarray
    source: str = "precomputed"  # "precomputed" | "pca"

    def __post_init__(self):
        coords = np.asarray(self.coordinates, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] < 1:
            raise ValueError("embedding must be n x d with d >= 1")
        if not np.isfinite(coords).all():
            raise ValueError("non-finite embedding coordinates")
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != coords.shape[0]:
            raise ValueError("one id per embedded row required")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "coordinates", coords)

    @property
    def n(self) -> int:
        return self.coordinates.shape[0]


@dataclass(frozen=True)
class FaultClustering:
    """HDBSCAN labels (-1 = noise) with quality scores over one population."""

    ids: tuple[str, ...]
    labels: np.ndarray
    num_clusters: int
    silhouette: float | None
    dbcv: float | None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        distinct = set(int(v) for v in labels if v >= 0)
        if len(distinct) != self.num_clusters:
            raise ValueError("num_clusters disagrees with labels")
        mcs = self.params.get("min_cluster_size")
        if mcs is not None:
            for c in distinct:
                if int((labels == c).sum()) < mcs:
                    raise ValueError(f"cluster {c} smaller than min_cluster_size")

    @property
    def noise_count(self) -> int:
        return int((self.labels == -1).sum())


def augment_features(features: FeatureMatrix, outcomes: OutcomeTable) -> FeatureMatrix:
    """Append the actual and predicted class as two extra feature columns.

    Only defined over mispredicted inputs.  Class ids are min-max scaled
    over the combined class range of the matched rows so the new columns
    live on the same [0, 1] scale as normalized features.
    """
    index = {oid: i for i, oid in enumerate(outcomes.ids)}
    rows = []
    for fid in features.ids:
        if fid not in index:
            raise KeyError(f"feature id {fid!r} missing from outcome table")
        rows.append(index[fid])
    rows = np.asarray(rows, dtype=np.int64)
    miss = outcomes.actual[rows] == outcomes.predicted[rows]
    if miss.any():
        bad = features.ids[int(np.flatnonzero(miss)[0])]
        raise NotMispredicted(f"input {bad!r} was predicted correctly")
    actual = outcomes.actual[rows].astype(np.float64)
    predicted = outcomes.predicted[rows].astype(np.float64)
    combined = np.concatenate([actual, predicted])
    lo, hi = float(combined.min()), float(combined.max())
    span = hi - lo
    if span > 0:
        actual = (actual - lo) / span
        predicted = (predicted - lo) / span
    else:
        actual = np.zeros_like(actual)
        predicted = np.zeros_like(predicted)
    values = np.column_stack([features.values, actual, predicted])
    return FeatureMatrix(features.ids, values, features.normalized)


def pca_embed(features: FeatureMatrix, dims: int) -> Embedding:
    """Project centered features onto the top principal directions.

    Deterministic sign convention: within each component the loading of
    largest magnitude is made positive.
    """
    if dims < 1 or dims > features.m:
        raise DimsTooLarge(f"dims must lie in [1, {features.m}], got {dims}")
    x = features.values
    centered = x - x.mean(axis=0)
    if features.n > 1:
        cov = (centered.T @ centered) / (features.n - 1)
    else:
        cov = np.zeros((features.m, features.m))
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:dims]
    components = eigvecs[:, order]
    for j in range(components.shape[1]):
        pivot = int(np.argmax(np.abs(components[:, j])))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    coords = centered @ components
    return Embedding(features.ids, coords, "pca")


# ---------------------------------------------------------------------------
# HDBSCAN


def _pairwise_distances(coords: np.ndarray) -> np.ndarray:
    n = coords.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        out[i] = np.sqrt(((coords - coords[i]) ** 2).sum(axis=1))
        out[i, i] = 0.0
    return out


def mutual_reachability(coords: np.ndarray, min_samples: int) -> np.ndarray:
    """max(core(a), core(b), d(a, b)) with core = distance to the
    min_samples-th nearest other point (capped at n - 1 neighbours)."""
    n = coords.shape[0]
    dist = _pairwise_distances(coords)
    ms = min(min_samples, n - 1)
    core = np.sort(dist, axis=1)[:, ms]
    mrd = np.maximum(dist, core[:, None])
    mrd = np.maximum(mrd, core[None, :])
    np.fill_diagonal(mrd, 0.0)
    return mrd


def _mst_prim(weights: np.ndarray) -> list[tuple[int, int, float]]:
    """Minimum spanning tree of a dense weight matrix, O(n^2)."""
    n = weights.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = weights[0].copy()
    best_from = np.zeros(n, dtype=np.int64)
    in_tree[0] = True
    edges = []
    for _ in range(n - 1):
        j = int(np.argmin(np.where(in_tree, np.inf, best)))
        edges.append((int(best_from[j]), j, float(best[j])))
        in_tree[j] = True
        improved = weights[j] < best
        best[improved] = weights[j][improved]
        best_from[improved] = j
    return edges


def _single_linkage(n: int, edges: list[tuple[int, int, float]]):
    """Merge MST edges in ascending (weight, u, v) order into a dendrogram.

    Returns (children, dist, size) keyed by node id; leaves are 0..n-1,
    internal nodes n..2n-2.
    """
    order = sorted(
        range(len(edges)), key=lambda k: (edges[k][2], *sorted(edges[k][:2]))
    )
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    children: dict[int, tuple[int, int]] = {}
    dist: dict[int, float] = {}
    size = [1] * (2 * n - 1)
    comp_node = list(range(n))  # component root point -> dendrogram node id
    nxt = n
    for k in order:
        u, v, w = edges[k]
        ru, rv = find(u), find(v)
        nu, nv = comp_node[ru], comp_node[rv]
        children[nxt] = (nu, nv)
        dist[nxt] = w
        size[nxt] = size[nu] + size[nv]
        parent[rv] = ru
        comp_node[ru] = nxt
        nxt += 1
    return children, dist, size


def _condense_tree(n: int, children, dist, size, min_cluster_size: int):
    """Collapse the dendrogram into (parent, child, lambda, size) edges.

    Condensed cluster ids start at n (the root); points keep 0..n-1.
    Splits into two >= min_cluster_size components spawn new clusters;
    anything smaller sheds its points at the split's lambda.
    """

    def leaves(node: int):
        stack = [node]
        while stack:
            x = stack.pop()
            if x < n:
                yield x
            else:
                stack.extend(children[x])

    root = 2 * n - 2
    relabel = {root: n}
    next_cluster = n + 1
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node < n:
            continue
        lam = np.inf if dist[node] == 0.0 else 1.0 / dist[node]
        left, right = children[node]
        size_l = 1 if left < n else size[left]
        size_r = 1 if right < n else size[right]
        cluster = relabel[node]
        if size_l >= min_cluster_size and size_r >= min_cluster_size:
            for child, child_size in ((left, size_l), (right, size_r)):
                relabel[child] = next_cluster
                out.append((cluster, next_cluster, lam, child_size))
                next_cluster += 1
                stack.append(child)
        elif size_l < min_cluster_size and size_r < min_cluster_size:
            for child in (left, right):
                for p in leaves(child):
                    out.append((cluster, p, lam, 1))
        else:
            big, small = (left, right) if size_l >= min_cluster_size else (right, left)
            relabel[big] = cluster
            for p in leaves(small):
                out.append((cluster, p, lam, 1))
            stack.append(big)
    return out


def _stability(n: int, condensed) -> dict[int, float]:
    birth = {n: 0.0}
    for _, child, lam, _ in condensed:
        if child >= n:
            birth[child] = lam
    stability = {c: 0.0 for c in birth}
    for parent, _, lam, sz in condensed:
        stability[parent] += (lam - birth[parent]) * sz
    return stability


def _select_clusters(n: int, condensed, stability: dict[int, float]) -> list[int]:
    """Excess-of-mass selection; the root is never selectable."""
    kids: dict[int, list[int]] = {}
    for parent, child, _, _ in condensed:
        if child >= n:
            kids.setdefault(parent, []).append(child)
    candidates = sorted(c for c in stability if c != n)
    totals = dict(stability)
    is_cluster = {c: True for c in candidates}

    def descendants(c: int):
        stack = list(kids.get(c, []))
        while stack:
            x = stack.pop()
            yield x
            stack.extend(kids.get(x, []))

    for c in sorted(candidates, reverse=True):
        subtree = sum(totals[ch] for ch in kids.get(c, []))
        if subtree > totals[c]:
            is_cluster[c] = False
            totals[c] = subtree
        else:
            for d in descendants(c):
                is_cluster[d] = False
    return [c for c in candidates if is_cluster[c]]


def _label_points(n: int, condensed, selected: list[int]) -> np.ndarray:
    cluster_parent = {}
    point_parent = {}
    for parent, child, _, _ in condensed:
        if child >= n:
            cluster_parent[child] = parent
        else:
            point_parent[child] = parent
    label_of = {c: i for i, c in enumerate(sorted(selected))}
    labels = np.full(n, -1, dtype=np.int64)
    for p in range(n):
        c = point_parent.get(p)
        while c is not None:
            if c in label_of:
                labels[p] = label_of[c]
                break
            c = cluster_parent.get(c)
    return labels


def hdbscan_labels(
    coords: np.ndarray, min_cluster_size: int, min_samples: int
) -> np.ndarray:
    """Raw HDBSCAN cluster labels (-1 noise) for an n x d array."""
    n = coords.shape[0]
    mrd = mutual_reachability(coords, min_samples)
    edges = _mst_prim(mrd)
    children, dist, size = _single_linkage(n, edges)
    condensed = _condense_tree(n, children, dist, size, min_cluster_size)
    stability = _stability(n, condensed)
    selected = _select_clusters(n, condensed, stability)
    return _label_points(n, condensed, selected)


def hdbscan(
    embedding: Embedding,
    min_cluster_size: int,
    min_samples: int | None = None,
) -> FaultClustering:
    """Density-based clustering of an embedding into fault groups.

    Core distance is the distance to the min_samples-th nearest neighbour;
    mutual reachability max(core(a), core(b), d(a, b)) feeds a minimum
    spanning tree, whose single-linkage hierarchy is condensed at
    ``min_cluster_size`` and mined for maximum-stability clusters.
    Points outside every selected cluster get label -1.  ``min_samples``
    defaults to ``min_cluster_size``.
    """
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be >= 2")
    if min_samples is None:
        min_samples = min_cluster_size
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    if embedding.n < min_cluster_size:
        raise TooFewPoints(
            f"{embedding.n} points cannot form clusters of size {min_cluster_size}"
        )
    labels = hdbscan_labels(embedding.coordinates, min_cluster_size, min_samples)
    num = len(set(int(v) for v in labels if v >= 0))
    sil = dbcv_score = None
    if num >= 2:
        sil = silhouette(embedding, labels)
        dbcv_score = dbcv(embedding, labels)
    return FaultClustering(
        embedding.ids,
        labels,
        num,
        sil,
        dbcv_score,
        {"min_cluster_size": min_cluster_size, "min_samples": min_samples},
    )


# ---------------------------------------------------------------------------
# Cluster quality


def _coords_of(embedding) -> np.ndarray:
    if isinstance(embedding, Embedding):
        return embedding.coordinates
    return np.asarray(embedding, dtype=np.float64)


def silhouette(embedding, labels) -> float:
    """Mean silhouette over non-noise points.

    For each point, a is its mean distance to same-cluster points and b
    the smallest mean distance to any other cluster; the score is
    (b - a) / max(a, b).  Points in singleton clusters contribute 0, as do
    points where both means vanish.
    """
    coords = _coords_of(embedding)
    labels = np.asarray(labels, dtype=np.int64)
    keep = labels >= 0
    clusters = sorted(set(int(v) for v in labels[keep]))
    if len(clusters) < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    dist = _pairwise_distances(coords)
    scores = []
    for i in np.flatnonzero(keep):
        own = labels[i]
        same = np.flatnonzero((labels == own) & (np.arange(len(labels)) != i))
        if same.size == 0:
            scores.append(0.0)  # singleton cluster
            continue
        a = float(dist[i, same].mean())
        b = min(
            float(dist[i, labels == other].mean())
            for other in clusters
            if other != own
        )
        top = max(a, b)
        scores.append(0.0 if top == 0.0 else (b - a) / top)
    return float(np.mean(scores))


def _all_points_core_distance(cluster: np.ndarray, dim: int) -> np.ndarray:
    """Moulavi et al.'s inverse-density core distance within one cluster."""
    n = cluster.shape[0]
    dist = _pairwise_distances(cluster)
    out = np.empty(n)
    with np.errstate(divide="ignore", over="ignore"):
        for i in range(n):
            inv = 1.0 / np.delete(dist[i], i)
            out[i] = float(np.mean(inv**dim) ** (-1.0 / dim))
    return out


def dbcv(embedding, labels) -> float:
    """Density-based cluster validity (Moulavi et al.), simplified form.

    Per cluster: sparseness = the largest edge of the minimum spanning
    tree under mutual reachability (using all-points core distances);
    separation = the smallest inter-cluster mutual reachability; validity
    = (separation - sparseness) / max(separation, sparseness).  The index
    is the cluster-size weighted mean over non-noise clusters.
    """
    coords = _coords_of(embedding)
    labels = np.asarray(labels, dtype=np.int64)
    clusters = sorted(set(int(v) for v in labels if v >= 0))
    if len(clusters) < 2:
        raise SingleCluster("DBCV needs at least two clusters")
    dim = coords.shape[1]
    members = {c: np.flatnonzero(labels == c) for c in clusters}
    apts = {}
    sparseness = {}
    for c in clusters:
        pts = coords[members[c]]
        if pts.shape[0] < 2:
            apts[c] = np.zeros(pts.shape[0])
            sparseness[c] = 0.0
            continue
        core = _all_points_core_distance(pts, dim)
        apts[c] = core
        dist = _pairwise_distances(pts)
        mrd = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
        np.fill_diagonal(mrd, 0.0)
        edges = _mst_prim(mrd)
        sparseness[c] = max(w for _, _, w in edges)
    total = sum(len(members[c]) for c in clusters)
    value = 0.0
    for c in clusters:
        seps = []
        for other in clusters:
            if other == c:
                continue
            a = coords[members[c]]
            b = coords[members[other]]
            cross = np.sqrt(
                ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
            )
            mr = np.maximum(cross, apts[c][:, None])
            mr = np.maximum(mr, apts[other][None, :])
            seps.append(float(mr.min()))
        separation = min(seps)
        top = max(separation, sparseness[c])
        validity = 0.0 if top == 0.0 else (separation - sparseness[c]) / top
        value += len(members[c]) / total * validity
    return float(value)


def count_faults(sample_ids: Sequence[str], clustering: FaultClustering) -> int:
    """Distinct non-noise clusters touched by the sample.

    Ids outside the clustered population (correctly predicted inputs) and
    noise-labelled inputs contribute nothing.
    """
    label_of = {i: int(l) for i, l in zip(clustering.ids, clustering.labels)}
    touched = {
        label_of[s] for s in sample_ids if s in label_of and label_of[s] >= 0
    }
    return len(touched)


def sweep(
    embedding: Embedding,
    min_cluster_sizes: Sequence[int],
    min_samples_values: Sequence[int | None] = (None,),
) -> list[dict]:
    """Grid of HDBSCAN configurations with their quality scores.

    Rows are ranked best-first by (silhouette, dbcv), undefined scores
    last, mirroring pick-the-best-silhouette-break-ties-by-DBCV selection.
    """
    rows = []
    for mcs, ms in product(min_cluster_sizes, min_samples_values):
        try:
            clustering = hdbscan(embedding, mcs, ms)
        except TooFewPoints:
            continue
        rows.append(
            {
                "params": {
                    "min_cluster_size": mcs,
                    "min_samples": ms if ms is not None else mcs,
                },
                "num_clusters": clustering.num_clusters,
                "noise_count": clustering.noise_count,
                "silhouette": clustering.silhouette,
                "dbcv": clustering.dbcv,
            }
        )
    neg = float("-inf")
    rows.sort(
        key=lambda r: (
            r["silhouette"] if r["silhouette"] is not None else neg,
            r["dbcv"] if r["dbcv"] is not None else neg,
        ),
        reverse=True,
    )
    return rows
