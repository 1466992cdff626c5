import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drivewm.errors import EmptyPath, LengthMismatch, PreconditionError, SetTooSmall
from drivewm.metrics import (
    Metric,
    TrajectorySet,
    ade,
    discrete_frechet,
    knn_thresholds,
    pairwise_distances,
    precision_recall,
    self_distances,
)
from oracles import ade_direct, frechet_all_couplings, frechet_bruteforce, precision_recall_direct

paths = st.integers(1, 6).flatmap(
    lambda n: arrays(float, (n, 2), elements=st.floats(-50, 50, allow_nan=False, width=32))
)


def line_set(offsets, n=5, label="s"):
    return TrajectorySet(label, [np.column_stack([np.arange(n, dtype=float), np.full(n, o)]) for o in offsets])


class TestAde:
    def test_identity(self):
        a = np.array([[0, 0], [1, 2], [3, 1.0]])
        assert ade(a, a) == 0.0

    def test_unit_offset(self):
        assert ade([[0, 0], [1, 0], [2, 0]], [[0, 1], [1, 1], [2, 1]]) == 1.0

    def test_hand_value(self):
        assert ade([[0, 0], [1, 0]], [[0, 0], [1, 2]]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            ade([[0, 0], [1, 0]], [[0, 0]])

    @given(st.integers(1, 8).flatmap(lambda n: st.tuples(
        arrays(float, (n, 2), elements=st.floats(-1e3, 1e3)),
        arrays(float, (n, 2), elements=st.floats(-1e3, 1e3)))))
    def test_symmetric_and_matches_direct(self, ab):
        a, b = ab
        assert ade(a, b) == ade(b, a)
        assert ade(a, b) == pytest.approx(ade_direct(a, b), rel=1e-12, abs=1e-12)


class TestFrechet:
    def test_identity(self):
        a = [[0, 0], [1, 1], [2, 0]]
        assert discrete_frechet(a, a) == 0.0

    def test_parallel(self):
        assert discrete_frechet([[0, 0], [1, 0]], [[0, 1], [1, 1]]) == 1.0

    def test_bump(self):
        assert discrete_frechet([[0, 0], [2, 0]], [[0, 0], [1, 1], [2, 0]]) == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_single_points(self):
        assert discrete_frechet([[0, 0]], [[3, 4]]) == 5.0

    def test_empty(self):
        with pytest.raises(EmptyPath):
            discrete_frechet(np.zeros((0, 2)), [[0, 0]])

    def test_oracles_agree_with_each_other(self, rng):
        # both reference enumerations are independent; make sure they agree first
        for _ in range(30):
            a = rng.normal(size=(rng.integers(1, 5), 2))
            b = rng.normal(size=(rng.integers(1, 5), 2))
            assert frechet_bruteforce(a, b) == frechet_all_couplings(a, b)

    @settings(max_examples=150, deadline=None)
    @given(paths, paths)
    def test_matches_bruteforce(self, a, b):
        assert abs(discrete_frechet(a, b) - frechet_bruteforce(a, b)) <= 1e-9

    @settings(max_examples=100, deadline=None)
    @given(paths, paths)
    def test_symmetric_nonnegative(self, a, b):
        d = discrete_frechet(a, b)
        assert d >= 0
        assert d == discrete_frechet(b, a)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6).flatmap(lambda n: st.tuples(
        arrays(float, (n, 2), elements=st.floats(-50, 50)),
        arrays(float, (n, 2), elements=st.floats(-50, 50)))))
    def test_bounds(self, ab):
        a, b = ab
        d = discrete_frechet(a, b)
        pointwise = np.hypot(*(a - b).T)
        assert d <= pointwise.max() + 1e-12
        assert d >= max(pointwise[0], pointwise[-1]) - 1e-12


class TestPairwise:
    def test_self_zero_diagonal_symmetric(self, rng):
        s = TrajectorySet("x", [rng.normal(size=(rng.integers(2, 7), 2)) for _ in range(6)])
        d = pairwise_distances(s, s, Metric.FRECHET)
        np.testing.assert_array_equal(np.diag(d), 0.0)
        np.testing.assert_array_equal(d, d.T)
        np.testing.assert_array_equal(self_distances(s, "frechet"), d)

    def test_matches_scalar_calls(self):
        a = [np.array([[0, 0], [1, 0.0]]), np.array([[0, 1], [1, 1.0]])]
        b = [np.array([[0, 0], [1, 2.0]]), np.array([[0, 0], [1, 0.0]])]
        for metric, fn in (("ade", ade), ("frechet", discrete_frechet)):
            d = pairwise_distances(a, b, metric)
            expected = [[fn(x, y) for y in b] for x in a]
            np.testing.assert_array_equal(d, expected)

    def test_batched_bit_identical_to_scalar(self, rng):
        src = [rng.normal(size=(rng.integers(2, 9), 2)) for _ in range(15)]
        dst = [rng.normal(size=(rng.integers(2, 9), 2)) for _ in range(11)]
        d = pairwise_distances(src, dst, "frechet")
        for i, a in enumerate(src):
            for j, b in enumerate(dst):
                assert d[i, j] == discrete_frechet(a, b)

    def test_singleton(self):
        assert pairwise_distances([[[0, 0], [1, 1]]], [[[0, 0], [1, 0]]], "ade").shape == (1, 1)

    def test_ade_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            pairwise_distances([np.zeros((3, 2))], [np.zeros((4, 2))], "ade")

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            pairwise_distances([np.zeros((3, 2))], [np.zeros((3, 2))], "dtw")


class TestThresholds:
    def test_collinear_k1(self):
        t = knn_thresholds(line_set([0, 1, 2]), 1, "ade")
        np.testing.assert_allclose(t.thresholds, [1, 1, 1], atol=1e-12)

    def test_collinear_k2(self):
        t = knn_thresholds(line_set([0, 1, 2]), 2, "ade")
        np.testing.assert_allclose(t.thresholds, [2, 1, 2], atol=1e-12)

    def test_duplicates(self):
        t = knn_thresholds(line_set([3, 3]), 1, "frechet")
        np.testing.assert_array_equal(t.thresholds, [0, 0])

    def test_too_small(self):
        with pytest.raises(SetTooSmall) as info:
            knn_thresholds(line_set([0, 1, 2]), 3, "ade")
        assert info.value.size == 3 and info.value.k == 3

    def test_k_positive(self):
        with pytest.raises(PreconditionError):
            knn_thresholds(line_set([0, 1, 2]), 0, "ade")


class TestPrecisionRecall:
    def test_identical_sets(self):
        s = line_set([0, 1, 2, 4])
        pr = precision_recall(s, s, 1, "frechet")
        assert (pr.precision, pr.recall) == (1.0, 1.0)

    def test_far_sets(self):
        pr = precision_recall(line_set([0, 1, 2]), line_set([1000, 1001, 1002]), 1, "ade")
        assert (pr.precision, pr.recall) == (0.0, 0.0)

    def test_strict_inequality(self):
        # generated path at exactly the real radius is not covered
        real = line_set([0, 1])
        gen = line_set([2, 10])
        pr = precision_recall(real, gen, 1, "ade")
        assert pr.precision == 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_matches_nested_loops(self, data):
        k = data.draw(st.integers(1, 3))
        n_real = data.draw(st.integers(k + 1, 10))
        n_gen = data.draw(st.integers(k + 1, 10))
        metric = data.draw(st.sampled_from(["ade", "frechet"]))
        length = data.draw(st.integers(2, 5))
        pts = arrays(float, (length, 2), elements=st.floats(-5, 5, width=16))
        real = [data.draw(pts) for _ in range(n_real)]
        gen = [data.draw(pts) for _ in range(n_gen)]
        pr = precision_recall(TrajectorySet("r", real), TrajectorySet("g", gen), k, metric)
        fn = ade if metric == "ade" else discrete_frechet
        assert (pr.precision, pr.recall) == precision_recall_direct(real, gen, k, fn)

    def test_swap_roles(self, rng):
        a = TrajectorySet("a", [rng.normal(size=(5, 2)) for _ in range(8)])
        b = TrajectorySet("b", [rng.normal(size=(5, 2)) + 0.5 for _ in range(9)])
        ab = precision_recall(a, b, 2, "frechet")
        ba = precision_recall(b, a, 2, "frechet")
        assert (ab.precision, ab.recall) == (ba.recall, ba.precision)

    def test_rigid_invariance(self, rng):
        a = [rng.normal(size=(6, 2)) for _ in range(8)]
        b = [rng.normal(size=(6, 2)) + 0.3 for _ in range(8)]
        th = 0.7
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        move = lambda s: [p @ R.T + [4.0, -2.0] for p in s]  # noqa: E731
        for metric in ("ade", "frechet"):
            p0 = precision_recall(TrajectorySet("r", a), TrajectorySet("g", b), 2, metric)
            p1 = precision_recall(TrajectorySet("r", move(a)), TrajectorySet("g", move(b)), 2, metric)
            assert (p0.precision, p0.recall) == (p1.precision, p1.recall)

    def test_set_too_small(self):
        with pytest.raises(SetTooSmall):
            precision_recall(line_set([0, 1, 2, 3]), line_set([0, 1]), 3, "ade")

    def test_values_in_unit_interval(self, rng):
        a = TrajectorySet("a", [rng.normal(size=(4, 2)) for _ in range(7)])
        b = TrajectorySet("b", [rng.normal(size=(4, 2)) for _ in range(5)])
        pr = precision_recall(a, b, 3, "ade")
        assert 0 <= pr.precision <= 1 and 0 <= pr.recall <= 1
        assert pr.k == 3 and pr.metric is Metric.ADE


def test_docstring_examples():
    import doctest

    import drivewm.metrics

    assert doctest.testmod(drivewm.metrics).failed == 0
