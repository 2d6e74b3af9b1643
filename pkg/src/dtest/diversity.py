"""Black-box diversity metrics over feature matrices.

Three metrics: geometric diversity (log-volume of the row parallelepiped),
normalized compression distance for multisets, and the L2 norm of the
per-feature population standard deviations.
"""

from __future__ import annotations

import bz2
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CompressorFailure, EmptySet, SetTooSmall
from .matrix import FeatureMatrix, dedup_rows, gram_log_det

__all__ = [
    "DiversityScore",
    "geometric_diversity",
    "ncd_bytes",
    "ncd_multiset",
    "std_norm",
    "COMPRESSORS",
]

# Exhaustive sub-multiset search is exponential; beyond this set size the
# greedy mode switches to steepest-descent removal.
DEFAULT_EXACT_LIMIT = 12


@dataclass(frozen=True)
class DiversityScore:
    metric: str  # "GD" | "NCD" | "STD"
    value: float
    set_size: int
    degenerate: bool = False


def geometric_diversity(
    matrix: FeatureMatrix, auto_dedup: bool = True
) -> DiversityScore:
    """Log-scale geometric diversity ln det(V V^T) of a normalized matrix.

    Duplicate rows force a zero determinant, so they are removed first when
    ``auto_dedup`` is set.  A finite score additionally needs fewer rows
    than features; otherwise the score is -inf with ``degenerate`` set.
    """
    work = matrix
    if auto_dedup:
        work, _ = dedup_rows(matrix, 0.0)
    if work.n == 0:
        raise EmptySet("no rows left to score")
    g = gram_log_det(work)
    return DiversityScore("GD", g.log_det, work.n, g.rank_deficient)


def std_norm(matrix: FeatureMatrix) -> DiversityScore:
    """L2 norm across features of each feature's population standard deviation."""
    variances = matrix.values.var(axis=0, ddof=0)
    value = float(np.sqrt(variances.sum()))
    return DiversityScore("STD", value, matrix.n, False)


def _zstd_compress(data: bytes) -> bytes:
    try:
        import zstandard
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise CompressorFailure(
            "zstd compressor requires the optional 'zstandard' package"
        ) from exc
    return zstandard.ZstdCompressor(level=19).compress(data)


COMPRESSORS: dict[str, Callable[[bytes], bytes]] = {
    "bzip2": lambda data: bz2.compress(data, 9),
    "gzip": lambda data: zlib.compress(data, 9),
    "zstd": _zstd_compress,
}


def _row_bytes(matrix: FeatureMatrix) -> list[bytes]:
    # Canonical serialization: little-endian float64 of each feature row.
    return [np.ascontiguousarray(row, dtype="<f8").tobytes() for row in matrix.values]


def ncd_bytes(
    rows: list[bytes],
    compressor: str = "bzip2",
    mode: str = "greedy",
    exact_limit: int = DEFAULT_EXACT_LIMIT,
) -> float:
    """Normalized compression distance of a multiset of byte strings.

    The single-level score of a multiset T is
    ``(C(T) - min_s C({s})) / max_s C(T \\ {s})`` where C is the compressed
    byte length of the concatenated rows (concatenation order fixed by
    sorting the serialized rows, so the score is row-order invariant).
    The final score maximizes the single-level score over T and every
    sub-multiset of size >= 2.

    ``mode="exact"`` always enumerates all sub-multisets.  ``mode="greedy"``
    enumerates only up to ``exact_limit`` elements and above that walks a
    steepest-descent removal path, an O(n^2)-subset approximation.
    """
    if len(rows) < 2:
        raise SetTooSmall("NCD needs a multiset of at least 2 rows")
    if mode not in ("exact", "greedy"):
        raise ValueError(f"unknown NCD mode {mode!r}")
    try:
        compress = COMPRESSORS[compressor]
    except KeyError:
        raise CompressorFailure(f"unknown compressor {compressor!r}") from None

    cache: dict[tuple[int, ...], int] = {}

    def c_of(idx: tuple[int, ...]) -> int:
        hit = cache.get(idx)
        if hit is None:
            data = b"".join(sorted(rows[i] for i in idx))
            try:
                hit = len(compress(data))
            except CompressorFailure:
                raise
            except Exception as exc:
                raise CompressorFailure(f"{compressor} failed: {exc}") from exc
            cache[idx] = hit
        return hit

    def ncd1(idx: tuple[int, ...]) -> float:
        whole = c_of(idx)
        smallest = min(c_of((i,)) for i in idx)
        largest_drop = max(c_of(idx[:k] + idx[k + 1 :]) for k in range(len(idx)))
        return (whole - smallest) / largest_drop

    n = len(rows)
    if mode == "exact" or n <= exact_limit:
        best = max(
            ncd1(tuple(i for i in range(n) if mask >> i & 1))
            for mask in range(2**n)
            if bin(mask).count("1") >= 2
        )
    else:
        current = tuple(range(n))
        best = ncd1(current)
        while len(current) > 2:
            drop_scores = [
                (ncd1(current[:k] + current[k + 1 :]), k) for k in range(len(current))
            ]
            stage_best, k = max(drop_scores)
            best = max(best, stage_best)
            current = current[:k] + current[k + 1 :]
    return float(best)


def ncd_multiset(
    matrix: FeatureMatrix,
    compressor: str = "bzip2",
    mode: str = "greedy",
    exact_limit: int = DEFAULT_EXACT_LIMIT,
) -> DiversityScore:
    """NCD of the feature rows, serialized as little-endian float64."""
    value = ncd_bytes(_row_bytes(matrix), compressor, mode, exact_limit)
    return DiversityScore("NCD", value, matrix.n, False)
