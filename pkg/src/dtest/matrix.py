"""Feature-matrix substrate shared by every metric.

Holds the n x m matrix of per-input feature vectors plus the three
operations everything else builds on: per-feature min-max normalization,
duplicate-row removal, and a numerically stable log-determinant of the
row Gram matrix V V^T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dpstrf

from .errors import EmptySet, NonFiniteInput

__all__ = [
    "FeatureMatrix",
    "GramLogDet",
    "min_max_normalize",
    "dedup_rows",
    "gram_log_det",
]


@dataclass(frozen=True)
class FeatureMatrix:
    """n x m real matrix; rows are inputs, columns are features.

    ``ids`` holds one unique identifier per row.  ``normalized`` records
    whether each column has been min-max scaled into [0, 1].
    """

    ids: tuple[str, ...]
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {values.shape}")
        ids = tuple(str(i) for i in self.ids)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", ids)
        n, m = values.shape
        if n == 0:
            raise EmptySet("feature matrix has no rows")
        if m == 0:
            raise EmptySet("feature matrix has no feature columns")
        if len(ids) != n:
            raise ValueError(f"{len(ids)} ids for {n} rows")
        if len(set(ids)) != n:
            raise ValueError("duplicate input ids in feature matrix")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GramLogDet:
    """Natural log of det(V V^T), or -inf when the Gram is singular."""

    log_det: float
    rank_deficient: bool
    effective_rank: int


def _require_finite(values: np.ndarray, what: str) -> None:
    if not np.isfinite(values).all():
        raise NonFiniteInput(f"non-finite entries in {what}")


def min_max_normalize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Scale every column into [0, 1]; constant columns map to 0.0.

    Column minima map to 0 and maxima to 1.  A constant column carries no
    diversity information, so it is sent to 0 rather than dividing by zero.
    """
    _require_finite(matrix.values, "feature matrix")
    lo = matrix.values.min(axis=0)
    span = matrix.values.max(axis=0) - lo
    out = np.zeros_like(matrix.values)
    keep = span > 0.0
    out[:, keep] = (matrix.values[:, keep] - lo[keep]) / span[keep]
    return FeatureMatrix(matrix.ids, out, normalized=True)


def dedup_rows(
    matrix: FeatureMatrix, tolerance: float = 0.0
) -> tuple[FeatureMatrix, list[str]]:
    """Drop rows within L-inf ``tolerance`` of an earlier row.

    The first occurrence of each duplicate group is retained; removed ids
    come back in input order.  The tolerance > 0 path compares each row
    against all survivors (O(n * kept * m)), which is fine for the exact
    default but worth knowing about on very large matrices.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    values = matrix.values
    keep: list[int] = []
    removed: list[str] = []
    if tolerance == 0.0:
        seen: set[bytes] = set()
        for i in range(matrix.n):
            key = values[i].tobytes()
            if key in seen:
                removed.append(matrix.ids[i])
            else:
                seen.add(key)
                keep.append(i)
    else:
        for i in range(matrix.n):
            if keep and bool(
                (np.abs(values[keep] - values[i]).max(axis=1) <= tolerance).any()
            ):
                removed.append(matrix.ids[i])
            else:
                keep.append(i)
    if not removed:
        return matrix, []
    kept_ids = tuple(matrix.ids[i] for i in keep)
    return FeatureMatrix(kept_ids, values[keep], matrix.normalized), removed


def gram_log_det(
    matrix: FeatureMatrix, pivot_rel_epsilon: float = 1e-10
) -> GramLogDet:
    """ln det(V V^T) via greedy-pivoted Cholesky accumulating log pivots.

    The raw determinant is never formed, so large sets cannot overflow.
    Rank deficiency (n > m, duplicate or collinear rows) is reported as
    a flag with a -inf sentinel instead of an error so callers can rank
    degenerate sets lowest.  A pivot counts as zero when it drops below
    ``pivot_rel_epsilon`` times the largest diagonal of the Gram.
    """
    _require_finite(matrix.values, "feature matrix")
    gram = matrix.values @ matrix.values.T
    log_sum, rank = _pivoted_cholesky_log_det(gram, pivot_rel_epsilon)
    deficient = matrix.n > matrix.m or rank < matrix.n
    return GramLogDet(
        log_det=float("-inf") if deficient else log_sum,
        rank_deficient=deficient,
        effective_rank=rank,
    )


def _pivoted_cholesky_log_det(gram: np.ndarray, rel_eps: float) -> tuple[float, int]:
    """Return (sum of log pivots, numerical rank) of a PSD matrix.

    Backed by LAPACK's pivoted Cholesky (dpstrf), which greedily pivots on
    the largest remaining diagonal and stops once a pivot falls to the
    tolerance; the log determinant is accumulated from the log factors.
    """
    a = np.ascontiguousarray(gram, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        return 0.0, 0
    tol = rel_eps * float(np.max(np.diagonal(a)))
    factor, _piv, rank, _info = dpstrf(a, tol=tol, lower=1)
    rank = int(rank)
    if rank == 0:
        return 0.0, 0
    pivots = np.diagonal(factor)[:rank]
    return float(2.0 * np.log(pivots).sum()), rank
