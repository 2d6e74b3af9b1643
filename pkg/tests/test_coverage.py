import math

import numpy as np
import pytest

from dtest.coverage import (
    ActivationProfile,
    ActivationTrace,
    dsc,
    kmnc,
    lsc,
    nbc,
    nc,
    snac,
    tknc,
)
from dtest.errors import (
    EmptyClassTrainingSet,
    EmptyTrace,
    KTooLarge,
    ProfileMismatch,
)

import oracle_coverage as oc


def trace_of(acts, layers=None):
    """acts[input][layer] = list of activations."""
    n = len(acts)
    n_layers = len(acts[0]) if n else len(layers)
    layers = layers or [
        (f"l{j}", len(acts[0][j])) for j in range(n_layers)
    ]
    arrays = [
        np.array([acts[i][j] for i in range(n)], dtype=float).reshape(n, layers[j][1])
        for j in range(n_layers)
    ]
    return ActivationTrace(tuple(f"t{i}" for i in range(n)), tuple(layers), tuple(arrays))


def profile_of(layers, lows, highs, train=None, labels=None):
    training = None
    if train is not None:
        training = {
            name: np.array([row for row in train], dtype=float)
            for name, _ in layers
        }
    return ActivationProfile(
        tuple(layers),
        tuple(np.asarray(v, float) for v in lows),
        tuple(np.asarray(v, float) for v in highs),
        training,
        None if labels is None else np.asarray(labels, int),
    )


class TestNc:
    def test_all_neurons_active(self):
        # one input, uniform layer: constant layers scale to zero, so use a
        # spread that puts every neuron's scaled value above threshold except
        # the minimum one; simplest direct case below uses two neurons.
        t = trace_of([[[0.5, 1.0]]])
        assert nc(t, 0.1).value == 0.5  # min scales to 0, max to 1

    def test_zero_activations(self):
        t = trace_of([[[0.0, 0.0, 0.0]]])
        assert nc(t, 0.1).value == 0.0

    def test_union_across_inputs(self):
        t = trace_of([[[1.0, 0.0]], [[0.0, 1.0]]])
        assert nc(t, 0.1).value == 1.0

    def test_empty_trace_rejected(self):
        t = trace_of([], layers=[("l0", 2)])
        with pytest.raises(EmptyTrace):
            nc(t, 0.1)


class TestKmnc:
    def layers(self):
        return [("l0", 1)]

    def test_both_buckets_hit(self):
        t = trace_of([[[0.25]], [[0.75]]])
        p = profile_of(self.layers(), [[0.0]], [[1.0]])
        assert kmnc(t, p, 2).value == 1.0

    def test_half_buckets_hit(self):
        t = trace_of([[[0.25]]])
        p = profile_of(self.layers(), [[0.0]], [[1.0]])
        assert kmnc(t, p, 2).value == 0.5

    def test_out_of_range_covers_nothing(self):
        t = trace_of([[[1.5]]])
        p = profile_of(self.layers(), [[0.0]], [[1.0]])
        assert kmnc(t, p, 2).value == 0.0

    def test_degenerate_neuron_single_bucket(self):
        t = trace_of([[[0.4, 0.2]]], layers=[("l0", 2)])
        p = profile_of([("l0", 2)], [[0.4, 0.0]], [[0.4, 1.0]])
        # degenerate neuron hit exactly at low: 1 bucket of k; other neuron 1 of k
        assert kmnc(t, p, 4).value == pytest.approx(2 / 8)

    def test_high_edge_lands_in_last_bucket(self):
        t = trace_of([[[1.0]]])
        p = profile_of(self.layers(), [[0.0]], [[1.0]])
        assert kmnc(t, p, 5).value == pytest.approx(1 / 5)


class TestNbcSnac:
    def test_single_upper_corner(self):
        t = trace_of([[[1.5]]])
        p = profile_of([("l0", 1)], [[0.0]], [[1.0]])
        assert nbc(t, p).value == 0.5
        assert snac(t, p).value == 1.0

    def test_inside_range(self):
        t = trace_of([[[0.5]]])
        p = profile_of([("l0", 1)], [[0.0]], [[1.0]])
        assert nbc(t, p).value == 0.0
        assert snac(t, p).value == 0.0

    def test_both_corners(self):
        t = trace_of([[[-0.5]], [[1.5]]])
        p = profile_of([("l0", 1)], [[0.0]], [[1.0]])
        assert nbc(t, p).value == 1.0

    def test_profile_mismatch(self):
        t = trace_of([[[0.5, 0.1]]], layers=[("l0", 2)])
        p = profile_of([("other", 2)], [[0, 0]], [[1, 1]])
        with pytest.raises(ProfileMismatch):
            nbc(t, p)


class TestTknc:
    def test_single_input_top1(self):
        t = trace_of([[[0.1, 0.2, 0.9]]])
        assert tknc(t, 1).value == pytest.approx(1 / 3)

    def test_k_equal_width(self):
        t = trace_of([[[0.1, 0.2, 0.9]]])
        assert tknc(t, 3).value == 1.0

    def test_two_inputs_distinct_argmax(self):
        t = trace_of([[[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]]])
        assert tknc(t, 1).value == pytest.approx(2 / 3)

    def test_ties_break_to_lower_index(self):
        t = trace_of([[[0.5, 0.5, 0.1]]])
        assert tknc(t, 1).value == pytest.approx(1 / 3)  # neuron 0 wins

    def test_k_too_large(self):
        t = trace_of([[[0.1, 0.2]]])
        with pytest.raises(KTooLarge):
            tknc(t, 3)


class TestLsc:
    def test_single_training_point_closed_form(self):
        # Test point equals its class's only training point. With one
        # training row the kernel variances fall back to 1 and Scott's
        # factor is 1, so the peak density is (2*pi)^(-d/2) and the
        # surprise is (d/2) * log(2*pi).
        layers = [("feat", 3)]
        train = [[0.2, 0.8, 0.5], [5.0, -3.0, 9.0], [-4.0, 6.0, 1.0]]
        labels = [1, 0, 0]
        p = profile_of(layers, [[-4, -3, 0.5]], [[5, 8, 9]], train, labels)
        t = trace_of([[[0.2, 0.8, 0.5]]], layers=layers)
        d = 3
        expected_surprise = (d / 2) * math.log(2 * math.pi)
        ub = 2 * expected_surprise
        score = lsc(t, p, "feat", ub, n_buckets=10, predicted=[1])
        assert score.value == pytest.approx(1 / 10)

    def test_empty_test_trace_scores_zero(self):
        layers = [("feat", 2)]
        p = profile_of(layers, [[0, 0]], [[1, 1]], [[0.0, 1.0], [1.0, 0.0]], [0, 1])
        t = trace_of([], layers=layers)
        assert lsc(t, p, "feat", 5.0, 10).value == 0.0

    def test_two_distinct_buckets(self):
        layers = [("feat", 1)]
        train = [[0.0], [1.0], [0.5], [0.25]]
        labels = [0, 0, 0, 0]
        p = profile_of(layers, [[0.0]], [[1.0]], train, labels)
        t = trace_of([[[0.5]], [[40.0]]], layers=layers)
        score = lsc(t, p, "feat", 10.0, n_buckets=10, predicted=[0, 0])
        ref = oc.oracle_lsc(
            layers, [[[0.5]], [[40.0]]], "feat", train, labels, [0, 0], 10.0, 10
        )
        assert score.value == ref == 0.2

    def test_missing_class_raises(self):
        layers = [("feat", 1)]
        p = profile_of(layers, [[0.0]], [[1.0]], [[0.1], [0.9]], [0, 0])
        t = trace_of([[[0.5]]], layers=layers)
        with pytest.raises(EmptyClassTrainingSet):
            lsc(t, p, "feat", 5.0, 10, predicted=[3])


class TestDsc:
    def _profile(self):
        layers = [("feat", 2)]
        train = [[0.0, 0.0], [1.0, 0.0], [0.0, 4.0]]
        labels = [0, 0, 1]
        return layers, train, labels, profile_of(
            layers, [[0, 0]], [[1, 4]], train, labels
        )

    def test_exact_training_point_is_zero_surprise(self):
        layers, train, labels, p = self._profile()
        t = trace_of([[[0.0, 0.0]]], layers=layers)
        score = dsc(t, p, "feat", 2.0, 10, predicted=[0])
        assert score.value == pytest.approx(1 / 10)  # first bucket only

    def test_midway_point_surprise_one(self):
        layers, train, labels, p = self._profile()
        # x at distance 4 from a=(0,0); b=(0,4) is at distance 4 from a.
        t = trace_of([[[-4.0, 0.0]]], layers=layers)
        ub = 2.0
        score = dsc(t, p, "feat", ub, n_buckets=2, predicted=[0])
        # surprise exactly 1.0 -> bucket floor(1/2*2)=1 -> second bucket
        assert score.value == 0.5

    def test_empty_test_trace_scores_zero(self):
        layers, train, labels, p = self._profile()
        t = trace_of([], layers=layers)
        assert dsc(t, p, "feat", 2.0, 10).value == 0.0

    def test_single_class_training_raises(self):
        layers = [("feat", 1)]
        p = profile_of(layers, [[0.0]], [[1.0]], [[0.1], [0.9]], [0, 0])
        t = trace_of([[[0.5]]], layers=layers)
        with pytest.raises(EmptyClassTrainingSet):
            dsc(t, p, "feat", 2.0, 10, predicted=[0])


def random_micro_trace(rng, with_training=True):
    n_layers = int(rng.integers(1, 3))
    widths = [int(rng.integers(1, 5)) for _ in range(n_layers)]
    layers = [(f"l{j}", widths[j]) for j in range(n_layers)]
    n = int(rng.integers(1, 6))
    acts = [[list(rng.random(w)) for w in widths] for _ in range(n)]
    trace = trace_of(acts, layers=layers)
    lows = [list(rng.random(w) * 0.4) for w in widths]
    highs = [[lo + 0.1 + rng.random() for lo in layer_lows] for layer_lows in lows]
    n_train = int(rng.integers(2, 7))
    train = [list(rng.random(widths[0])) for _ in range(n_train)]
    labels = [int(rng.integers(0, 2)) for _ in range(n_train)]
    while len(set(labels)) < 2:  # dsc needs two classes
        labels = [int(rng.integers(0, 2)) for _ in range(n_train)]
    profile = profile_of(layers, lows, highs, None, None)
    full_profile = ActivationProfile(
        tuple(layers),
        tuple(np.asarray(v, float) for v in lows),
        tuple(np.asarray(v, float) for v in highs),
        {"l0": np.array(train, dtype=float)},
        np.asarray(labels, int),
    )
    return layers, acts, trace, lows, highs, profile, full_profile, train, labels


class TestOracleEquivalence:
    def test_structural_criteria_match_oracle(self):
        for seed in range(60):
            rng = np.random.default_rng(seed)
            layers, acts, trace, lows, highs, profile, *_ = random_micro_trace(rng)
            threshold = float(rng.random() * 0.8)
            k_m = int(rng.integers(1, 4))
            assert nc(trace, threshold).value == oc.oracle_nc(layers, acts, threshold)
            assert kmnc(trace, profile, k_m).value == oc.oracle_kmnc(
                layers, acts, lows, highs, k_m
            )
            ref_nbc, ref_snac = oc.oracle_nbc_snac(layers, acts, lows, highs)
            assert nbc(trace, profile).value == ref_nbc
            assert snac(trace, profile).value == ref_snac
            k_t = int(rng.integers(1, min(w for _, w in layers) + 1))
            assert tknc(trace, k_t).value == oc.oracle_tknc(layers, acts, k_t)

    def test_surprise_criteria_match_oracle(self):
        for seed in range(40):
            rng = np.random.default_rng(1000 + seed)
            (layers, acts, trace, lows, highs, _, full_profile,
             train, labels) = random_micro_trace(rng)
            predicted = [int(rng.integers(0, 2)) for _ in range(trace.n)]
            ub = float(0.5 + rng.random() * 20)
            buckets = int(rng.integers(1, 4))
            got = lsc(trace, full_profile, "l0", ub, buckets, predicted).value
            ref = oc.oracle_lsc(
                layers, acts, "l0", train, labels, predicted, ub, buckets
            )
            assert got == ref
            got_d = dsc(trace, full_profile, "l0", ub, buckets, predicted).value
            ref_d = oc.oracle_dsc(
                layers, acts, "l0", train, labels, predicted, ub, buckets
            )
            assert got_d == ref_d


class TestMonotonicity:
    CRITERIA = ("nc", "kmnc", "nbc", "snac", "tknc", "lsc", "dsc")

    def _score(self, name, trace, profile, predicted):
        if name == "nc":
            return nc(trace, 0.1).value
        if name == "kmnc":
            return kmnc(trace, profile, 3).value
        if name == "nbc":
            return nbc(trace, profile).value
        if name == "snac":
            return snac(trace, profile).value
        if name == "tknc":
            return tknc(trace, 1).value
        if name == "lsc":
            return lsc(trace, profile, "l0", 8.0, 3, predicted).value
        return dsc(trace, profile, "l0", 8.0, 3, predicted).value

    def test_adding_inputs_never_decreases_coverage(self):
        for seed in range(30):
            rng = np.random.default_rng(2000 + seed)
            (layers, acts, trace, lows, highs, _, profile,
             train, labels) = random_micro_trace(rng)
            if trace.n < 2:
                continue
            half = trace.take(range(trace.n // 2))
            predicted_full = [int(rng.integers(0, 2)) for _ in range(trace.n)]
            predicted_half = predicted_full[: trace.n // 2]
            for name in self.CRITERIA:
                small = self._score(name, half, profile, predicted_half)
                full = self._score(name, trace, profile, predicted_full)
                assert full >= small - 1e-15, name

    def test_input_reordering_invariance(self):
        for seed in range(10):
            rng = np.random.default_rng(3000 + seed)
            (layers, acts, trace, lows, highs, _, profile,
             train, labels) = random_micro_trace(rng)
            perm = list(rng.permutation(trace.n))
            shuffled = trace.take(perm)
            predicted = [int(rng.integers(0, 2)) for _ in range(trace.n)]
            pred_shuffled = [predicted[i] for i in perm]
            for name in self.CRITERIA:
                assert self._score(name, trace, profile, predicted) == self._score(
                    name, shuffled, profile, pred_shuffled
                ), name


class TestIdentities:
    def test_kmnc_k1_equals_in_range_fraction(self):
        for seed in range(10):
            rng = np.random.default_rng(4000 + seed)
            layers, acts, trace, lows, highs, profile, *_ = random_micro_trace(rng)
            got = kmnc(trace, profile, 1).value
            in_range = 0
            total = 0
            for li, (_, w) in enumerate(layers):
                for j in range(w):
                    total += 1
                    if any(
                        lows[li][j] <= acts[i][li][j] <= highs[li][j]
                        for i in range(trace.n)
                    ):
                        in_range += 1
            assert got == in_range / total

    def test_nbc_decomposition_identity(self):
        for seed in range(10):
            rng = np.random.default_rng(5000 + seed)
            layers, acts, trace, lows, highs, profile, *_ = random_micro_trace(rng)
            total = trace.total_neurons
            snac_num = snac(trace, profile).value * total
            lower = oc.oracle_nbc_snac(layers, acts, lows, highs)[0] * 2 * total - snac_num
            assert nbc(trace, profile).value * 2 * total == pytest.approx(
                snac_num + lower
            )
