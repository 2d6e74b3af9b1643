import math

import numpy as np
import pytest

from dtest.errors import CompressorFailure, SetTooSmall
from dtest.diversity import (
    geometric_diversity,
    ncd_bytes,
    ncd_multiset,
    std_norm,
)
from dtest.matrix import FeatureMatrix

from conftest import random_matrix
from oracles import det_cofactor


def fm(rows, normalized=True):
    rows = np.asarray(rows, dtype=float)
    return FeatureMatrix(tuple(f"r{i}" for i in range(rows.shape[0])), rows, normalized)


class TestGeometricDiversity:
    def test_orthonormal_rows_have_unit_volume(self):
        score = geometric_diversity(fm([[1, 0, 0, 0], [0, 1, 0, 0]]))
        assert score.value == 0.0
        assert not score.degenerate
        assert score.set_size == 2

    def test_duplicate_row_without_dedup_is_degenerate(self):
        score = geometric_diversity(
            fm([[0.2, 0.4, 0.1], [0.2, 0.4, 0.1]]), auto_dedup=False
        )
        assert score.degenerate
        assert score.value == float("-inf")

    def test_duplicate_row_with_dedup(self):
        score = geometric_diversity(fm([[0.2, 0.4, 0.1], [0.2, 0.4, 0.1]]))
        assert not score.degenerate
        assert score.set_size == 1

    def test_scaled_axes(self):
        score = geometric_diversity(fm([[1, 0, 0], [0, 2, 0]]))
        gram = [[1.0, 0.0], [0.0, 4.0]]
        assert score.value == pytest.approx(math.log(det_cofactor(gram)), abs=1e-12)
        assert score.value == pytest.approx(math.log(4.0), abs=1e-12)

    def test_appending_distant_row_grows_by_2logd(self, rng):
        rows = np.zeros((2, 6))
        rows[0, 0] = 1.0
        rows[1, 1] = 1.0
        d = 3.7
        new = np.array([0.4, 0.2, d, 0.0, 0.0, 0.0])  # distance d from span(e1,e2)
        base = geometric_diversity(fm(rows)).value
        grown = geometric_diversity(fm(np.vstack([rows, new]))).value
        assert grown - base == pytest.approx(2.0 * math.log(d), abs=1e-9)


class TestStdNorm:
    def test_identical_rows(self):
        assert std_norm(fm([[0.3, 0.7], [0.3, 0.7]])).value == 0.0

    def test_two_point_example(self):
        score = std_norm(fm([[0.0, 0.0], [1.0, 1.0]]))
        assert score.value == pytest.approx(math.sqrt(0.5), abs=1e-12)

    def test_single_row(self):
        assert std_norm(fm([[0.1, 0.9, 0.5]])).value == 0.0

    def test_duplicating_the_multiset_is_invariant(self, rng):
        m = random_matrix(rng, 9, 5, normalized=True)
        doubled = FeatureMatrix(
            tuple(f"x{i}" for i in range(18)), np.vstack([m.values, m.values]), True
        )
        assert std_norm(doubled).value == pytest.approx(std_norm(m).value, abs=1e-12)


class TestNcd:
    def test_identical_zero_rows_compress_jointly(self):
        rows = [bytes(1024), bytes(1024)]
        assert ncd_bytes(rows, "bzip2") < 0.1

    def test_independent_random_rows_are_incompressible(self, rng):
        # bzip2 carries a few hundred bytes of per-block table overhead, so
        # the near-1 regime needs rows comfortably above that. At 1 KiB the
        # honest bzip2 value sits near 0.84; gzip reaches 0.9 already there.
        small = [rng.bytes(1024), rng.bytes(1024)]
        assert 0.75 < ncd_bytes(small, "bzip2") < 0.9
        assert ncd_bytes(small, "gzip") > 0.9
        big = [rng.bytes(16384), rng.bytes(16384)]
        assert ncd_bytes(big, "bzip2") > 0.9

    def test_single_row_raises(self):
        with pytest.raises(SetTooSmall):
            ncd_multiset(fm([[0.1, 0.2]]))

    def test_unknown_compressor(self):
        with pytest.raises(CompressorFailure):
            ncd_multiset(fm([[0.1], [0.2]]), compressor="lzma")

    def test_row_order_invariance(self, rng):
        m = random_matrix(rng, 5, 8, normalized=True)
        shuffled = FeatureMatrix(m.ids, m.values[::-1].copy(), True)
        a = ncd_multiset(m, "bzip2", "exact")
        b = ncd_multiset(shuffled, "bzip2", "exact")
        assert a.value == b.value

    def test_greedy_dispatches_to_exact_below_limit(self, rng):
        for seed in range(10):
            local = np.random.default_rng(seed)
            n = int(local.integers(2, 9))
            m = FeatureMatrix(
                tuple(f"x{i}" for i in range(n)), local.random((n, 12)), True
            )
            exact = ncd_multiset(m, "bzip2", "exact")
            greedy = ncd_multiset(m, "bzip2", "greedy")
            assert exact.value == greedy.value

    def test_greedy_above_limit_is_lower_bound(self, rng):
        m = random_matrix(rng, 7, 10, normalized=True)
        exact = ncd_multiset(m, "bzip2", "exact").value
        greedy = ncd_multiset(m, "bzip2", "greedy", exact_limit=3).value
        assert greedy <= exact + 1e-12

    def test_value_within_documented_range(self, rng):
        m = random_matrix(rng, 6, 16, normalized=True)
        score = ncd_multiset(m, "bzip2", "exact")
        assert 0.0 <= score.value <= 1.1

    def test_gzip_compressor_runs(self, rng):
        m = random_matrix(rng, 4, 8, normalized=True)
        score = ncd_multiset(m, "gzip", "exact")
        assert 0.0 <= score.value <= 1.1

    def test_zstd_errors_cleanly_or_runs(self, rng):
        m = random_matrix(rng, 3, 8, normalized=True)
        try:
            import zstandard  # noqa: F401
        except ImportError:
            with pytest.raises(CompressorFailure):
                ncd_multiset(m, "zstd", "exact")
        else:
            assert 0.0 <= ncd_multiset(m, "zstd", "exact").value <= 1.1
