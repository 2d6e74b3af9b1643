"""Rank statistics: Spearman correlation and the Wilcoxon signed-rank test.

Both carry exact small-sample p-values (permutation / sign enumeration via
rank-sum convolution) alongside the usual large-sample approximations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from .errors import LengthMismatch, TooFewPairs, ZeroVariance

__all__ = [
    "CorrelationResult",
    "WilcoxonResult",
    "spearman",
    "wilcoxon_signed_rank",
]

SIGNIFICANCE_LEVEL = 0.05
SPEARMAN_EXACT_LIMIT = 9  # n! permutations are enumerable up to here
WILCOXON_EXACT_LIMIT = 20


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p_value: float
    n: int
    significant: bool


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int


def _rank_average(values: np.ndarray) -> np.ndarray:
    return sstats.rankdata(values, method="average")


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def _spearman_p_t(rho: float, n: int) -> float:
    """Two-sided p via the t approximation with n - 2 degrees of freedom."""
    if abs(rho) >= 1.0:
        return 0.0
    t = abs(rho) * math.sqrt((n - 2) / (1.0 - rho * rho))
    return float(min(1.0, 2.0 * sstats.t.sf(t, n - 2)))


def _spearman_p_exact(rx: np.ndarray, ry: np.ndarray, rho_obs: float) -> float:
    """Two-sided p by enumerating all n! pairings of the given ranks.

    The permutation rho is monotone in the cross-rank dot product, so only
    dot products are compared.
    """
    n = rx.size
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    dots = ry[perms] @ rx
    scale = math.sqrt(
        float(((rx - rx.mean()) ** 2).sum()) * float(((ry - ry.mean()) ** 2).sum())
    )
    rhos = (dots - n * rx.mean() * ry.mean()) / scale
    hits = int(np.count_nonzero(np.abs(rhos) >= abs(rho_obs) - 1e-12))
    return hits / len(perms)


def spearman(x, y) -> CorrelationResult:
    """Spearman rank correlation with a two-sided p-value.

    Ties get average ranks.  The p-value is exact (full permutation
    enumeration) for n <= 9 and the Student-t approximation above that.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise LengthMismatch(f"paired samples required, got {x.shape} vs {y.shape}")
    n = x.size
    if n < 3:
        raise LengthMismatch(f"need at least 3 pairs, got {n}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in correlation input")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ZeroVariance("one sample is entirely tied; rho undefined")
    rx = _rank_average(x)
    ry = _rank_average(y)
    rho = _pearson(rx, ry)
    if n <= SPEARMAN_EXACT_LIMIT:
        p = _spearman_p_exact(rx, ry, rho)
    else:
        p = _spearman_p_t(rho, n)
    return CorrelationResult(rho, p, n, p <= SIGNIFICANCE_LEVEL)


def _signed_rank_sums(diffs: np.ndarray) -> tuple[float, float, np.ndarray]:
    ranks = _rank_average(np.abs(diffs))
    t_plus = float(ranks[diffs > 0].sum())
    t_minus = float(ranks[diffs < 0].sum())
    return t_plus, t_minus, ranks


def _wilcoxon_p_exact(ranks: np.ndarray, w: float) -> float:
    """Exact two-sided p over all 2^n sign assignments.

    Doubling the (possibly half-integer) average ranks makes them integers,
    so the rank-sum distribution is a 0/1 knapsack convolution.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] += counts[: total + 1 - r]
    w2 = 2.0 * w
    sums = np.arange(total + 1)
    low = counts[sums <= w2 + 1e-9].sum()
    high = counts[sums >= total - w2 - 1e-9].sum()
    return float(min(1.0, (low + high) / counts.sum()))


def _wilcoxon_p_normal(ranks: np.ndarray, w: float) -> float:
    n = ranks.size
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float((tie_counts**3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return 1.0
    z = (w - mu + 0.5) / math.sqrt(var)  # continuity correction; w <= mu
    return float(min(1.0, 2.0 * sstats.norm.cdf(z)))


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped (Wilcoxon's rule); at least 5 non-zero
    pairs are required.  The statistic is the smaller signed-rank sum.
    P-values are exact for up to 20 effective pairs, otherwise the normal
    approximation with tie correction and continuity correction is used.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise LengthMismatch(f"paired samples required, got {a.shape} vs {b.shape}")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n_eff = int(diffs.size)
    if n_eff < 5:
        raise TooFewPairs(f"need >= 5 non-zero differences, got {n_eff}")
    t_plus, t_minus, ranks = _signed_rank_sums(diffs)
    w = min(t_plus, t_minus)
    if n_eff <= WILCOXON_EXACT_LIMIT:
        p = _wilcoxon_p_exact(ranks, w)
    else:
        p = _wilcoxon_p_normal(ranks, w)
    return WilcoxonResult(w, p, n_eff)
