import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsfnet import adgraph as ad
from dsfnet.permops import (PermMatrix, accuracy_metrics, apply_permutation, argsort,
                            gt_permutation, is_doubly_stochastic, is_hard_permutation,
                            split_hard_permutation, split_hard_permutation_multi)
from dsfnet.sigmoid import SigmoidSpec
from dsfnet.sortnet import build_odd_even, execute

keys_st = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=20)
dup_keys_st = st.lists(st.integers(-3, 3).map(float), min_size=1, max_size=20)


def hard(M):
    return PermMatrix(ad.const(np.asarray(M, dtype=float)), "hard")


class TestGroundTruth:
    def test_sorted(self):
        np.testing.assert_array_equal(gt_permutation([0.0, 1.0, 2.0]).perm.value, np.eye(3))

    def test_brute_force(self):
        keys = np.array([2.0, 0.0, 1.0])
        P = gt_permutation(keys).perm.value
        np.testing.assert_array_equal(P.T @ keys, [0, 1, 2])
        for perm in itertools.permutations(range(3)):
            Q = np.eye(3)[list(perm)].T
            if np.array_equal(Q.T @ keys, [0, 1, 2]):
                np.testing.assert_array_equal(P, Q)

    def test_tie(self):
        np.testing.assert_array_equal(gt_permutation([1.0, 1.0]).perm.value, np.eye(2))

    def test_orientation(self):
        P = gt_permutation([5.0, -1.0]).perm.value
        # unsorted element 0 lands at sorted position 1
        assert P[0, 1] == 1.0 and P[1, 0] == 1.0

    @given(dup_keys_st)
    def test_sorts_with_duplicates(self, keys):
        gt = gt_permutation(keys)
        out = apply_permutation(gt.perm, np.array(keys)).value
        assert np.array_equal(out, np.sort(keys))
        assert is_hard_permutation(gt.perm)


class TestChecks:
    def test_examples(self):
        assert is_doubly_stochastic(np.eye(4))
        assert is_doubly_stochastic(np.full((2, 2), 0.5))
        assert not is_doubly_stochastic(np.array([[1.0, 1.0], [0.0, 0.0]]))

    def test_negative_entries_rejected(self):
        M = np.array([[1.5, -0.5], [-0.5, 1.5]])
        assert not is_doubly_stochastic(M)
        assert is_doubly_stochastic(M, tol=0.6)

    def test_hard(self):
        assert is_hard_permutation(np.eye(3)[[2, 0, 1]])
        assert not is_hard_permutation(np.full((2, 2), 0.5))
        assert not is_hard_permutation(np.array([[1.0, 0.0], [1.0, 0.0]]))

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError):
            PermMatrix(ad.const(np.ones((2, 3))), "hard")
        assert not is_doubly_stochastic(np.ones((2, 3)))


class TestArgsort:
    def test_examples(self):
        assert argsort([10.0, -1.0, 3.0]).tolist() == [1, 2, 0]
        assert argsort([1.0, 2.0, 3.0]).tolist() == [0, 1, 2]
        assert argsort([4.0] * 5).tolist() == list(range(5))

    @given(dup_keys_st)
    def test_matches_sorted_oracle(self, v):
        expect = [i for i, _ in sorted(enumerate(v), key=lambda t: t[1])]
        assert argsort(v).tolist() == expect


class TestSplit:
    def test_example(self):
        keys = np.array([3.0, 1.0, 2.0, 0.0])
        P1, P2 = split_hard_permutation(gt_permutation(keys).perm, 2, 2)
        np.testing.assert_array_equal(P1.value, [[0, 1], [1, 0]])
        np.testing.assert_array_equal(P2.value, [[0, 1], [1, 0]])

    def test_identity(self):
        for n1 in range(0, 6):
            A, B = split_hard_permutation(hard(np.eye(5)), n1, 5 - n1)
            np.testing.assert_array_equal(A.value, np.eye(n1))
            np.testing.assert_array_equal(B.value, np.eye(5 - n1))

    def test_sorted_one_three(self):
        A, B = split_hard_permutation(gt_permutation([0.0, 1.0, 2.0, 3.0]).perm, 1, 3)
        assert A.value.tolist() == [[1.0]]
        np.testing.assert_array_equal(B.value, np.eye(3))

    def test_errors(self):
        with pytest.raises(ValueError):
            split_hard_permutation(PermMatrix(ad.const(np.full((2, 2), 0.5)), "soft"), 1, 1)
        with pytest.raises(ValueError):
            split_hard_permutation(hard(np.eye(3)), 1, 1)

    @given(keys_st.filter(lambda k: len(k) >= 2), st.data())
    def test_blocks_sort_halves(self, keys, data):
        keys = np.array(keys)
        n = len(keys)
        n1 = data.draw(st.integers(1, n - 1))
        A, B = split_hard_permutation(gt_permutation(keys).perm, n1, n - n1)
        for block, half in ((A, keys[:n1]), (B, keys[n1:])):
            assert is_hard_permutation(block) and is_doubly_stochastic(block)
            assert np.array_equal(apply_permutation(block, half).value, np.sort(half))

    def test_multi_split(self):
        keys = np.array([5.0, 2.0, 9.0, 1.0, 7.0, 3.0, 0.0])
        blocks = split_hard_permutation_multi(gt_permutation(keys).perm, [2, 3, 2])
        assert [b.n for b in blocks] == [2, 3, 2]
        for block, half in zip(blocks, (keys[:2], keys[2:5], keys[5:])):
            assert np.array_equal(apply_permutation(block, half).value, np.sort(half))
        with pytest.raises(ValueError):
            split_hard_permutation_multi(gt_permutation(keys).perm, [2, 2])

    def test_split_keeps_straight_through_gradient(self):
        s = ad.leaf(np.array([0.5, -0.3, 1.2, 0.1]))
        _, P = execute(build_odd_even(4), s, SigmoidSpec("logistic", 1.0), "error-free")
        A, B = split_hard_permutation(P, 2, 2)
        g = ad.backward(ad.total(A.entries * np.array([[1.0, 2.0], [3.0, 4.0]])))
        assert np.any(g[s] != 0)

    def test_soft_blocks_are_not_stochastic(self):
        # documents why only hard matrices are split
        rng = np.random.default_rng(0)
        failures = 0
        for _ in range(50):
            s = rng.normal(size=6)
            _, P = execute(build_odd_even(6), s, SigmoidSpec("logistic", 1.0), "soft")
            failures += not is_doubly_stochastic(P.value[:3, :3], 1e-6)
        assert failures > 40


class TestAccuracy:
    def test_perfect(self):
        rng = np.random.default_rng(0)
        triples = []
        for _ in range(5):
            s = rng.normal(size=4)
            gt = gt_permutation(s).perm
            triples.append((s, gt, gt))
        assert accuracy_metrics(triples) == (1.0, 1.0)

    def test_counts(self):
        s = np.arange(5.0)
        gt = gt_permutation(s).perm
        # predicted order swaps positions 0 and 1 only: 3 of 5 correct
        wrong = hard(np.eye(5)[[1, 0, 2, 3, 4]])
        em, ew = accuracy_metrics([(s, gt, gt), (s, wrong, gt)])
        assert (em, ew) == (0.5, 0.8)

    def test_error_free_network_scalars(self):
        rng = np.random.default_rng(3)
        triples = []
        for _ in range(100):
            s = rng.uniform(-10, 10, size=7)
            _, P = execute(build_odd_even(7), s, SigmoidSpec("optimal", 1.0), "error-free")
            triples.append((s, P, gt_permutation(s).perm))
        assert accuracy_metrics(triples) == (1.0, 1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy_metrics([])

    @given(st.lists(st.permutations(range(5)), min_size=1, max_size=10))
    def test_em_le_ew(self, perms):
        s = np.arange(5.0)
        gt = gt_permutation(s).perm
        em, ew = accuracy_metrics([(s, hard(np.eye(5)[list(p)]), gt) for p in perms])
        assert 0 <= em <= ew <= 1


class TestApply:
    def test_identity(self):
        X = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(apply_permutation(hard(np.eye(3)), X).value, X)

    def test_swap_rows(self):
        X = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        P = gt_permutation([1.0, 0.0]).perm
        np.testing.assert_array_equal(apply_permutation(P, X).value, X[::-1])

    def test_soft_half(self):
        X = np.array([[1.0, 3.0], [5.0, 7.0]])
        out = apply_permutation(PermMatrix(ad.const(np.full((2, 2), 0.5)), "soft"), X).value
        np.testing.assert_array_equal(out, [[3.0, 5.0], [3.0, 5.0]])

    def test_hard_rows_are_exact_copies(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(6, 3)) * 1e7
        keys = rng.normal(size=6)
        out = apply_permutation(gt_permutation(keys).perm, X).value
        np.testing.assert_array_equal(out, X[argsort(keys)])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_permutation(hard(np.eye(3)), np.ones((2, 2)))
