import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unlearn.dare import (
    DareForest,
    ForestParams,
    NaiveForest,
    Node,
    fit,
    flatten_tree,
    forests_equal,
    gini_gain,
    naive_retrain,
)
from unlearn.dataset import Dataset, generate_synthetic
from unlearn.errors import ArgumentError, InvariantError, StateError
from unlearn.selftest import random_instance


def _gini(a, b):
    # independent restatement: 1 - sum of squared class shares
    n = a + b
    return 0.0 if n == 0 else 1 - (a / n) ** 2 - (b / n) ** 2


def _shape(model):
    return [tuple(map(bytes, (f.tobytes(), t.tobytes()))) for f, t, *_ in map(flatten_tree, model.trees)]


class TestGiniGain:
    def test_pure_children(self):
        assert gini_gain((2, 2), (2, 0), (0, 2)) == 0.5

    def test_mirrored_children(self):
        assert gini_gain((2, 2), (1, 1), (1, 1)) == 0.0

    @pytest.mark.parametrize("left", [(1, 0), (2, 0), (3, 0)])
    def test_pure_parent(self, left):
        assert gini_gain((4, 0), left, (4 - left[0], 0)) == 0.0

    def test_empty_child(self):
        assert gini_gain((3, 1), (0, 0), (3, 1)) == 0.0

    def test_mismatch(self):
        with pytest.raises(InvariantError):
            gini_gain((2, 2), (1, 0), (0, 1))

    @given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 30), st.integers(0, 30))
    def test_matches_weighted_impurity(self, l0, l1, r0, r1):
        p = (l0 + r0, l1 + r1)
        if sum(p) == 0:
            return
        g = gini_gain(p, (l0, l1), (r0, r1))
        nl, nr, n = l0 + l1, r0 + r1, sum(p)
        expected = 0.0 if nl == 0 or nr == 0 else _gini(*p) - nl / n * _gini(l0, l1) - nr / n * _gini(r0, r1)
        assert g == pytest.approx(expected, abs=1e-12)
        assert g >= -1e-12


class TestFit:
    def test_separable_four_rows(self, tiny):
        m = DareForest(ForestParams(n_trees=1, max_depth=2), seed=0).fit(tiny)
        assert np.array_equal(m.predict(tiny), tiny.labels)
        for leaf in m.trees[0].leaves():
            assert leaf.n0 == 0 or leaf.n1 == 0

    def test_single_class(self):
        ds = Dataset(np.random.default_rng(0).normal(size=(12, 3)), np.ones(12, np.uint8))
        m = fit(ds, ForestParams(n_trees=4), seed=1)
        assert all(t.is_leaf for t in m.trees)
        assert np.all(m.predict_proba(ds) == 1.0)

    def test_deterministic(self):
        ds = generate_synthetic(80, 6, 1.5, seed=2)
        assert forests_equal(fit(ds, seed=5), fit(ds, seed=5))

    def test_empty(self):
        with pytest.raises(ArgumentError):
            fit(Dataset(np.zeros((0, 2)), np.zeros(0, np.uint8)))

    def test_naive_matches_dare_structure(self):
        ds = generate_synthetic(120, 9, 1.0, seed=4)
        params = ForestParams(n_trees=3, max_depth=5)
        assert _shape(DareForest(params, 3).fit(ds)) == _shape(NaiveForest(params, 3).fit(ds))

    def test_tree_count_and_feature_subset(self):
        ds = generate_synthetic(30, 10, 1.0, seed=0)
        m = fit(ds, ForestParams(n_trees=7), seed=0)
        assert len(m.trees) == 7
        assert all(f.size == 4 for f in m.tree_features)


class TestPredict:
    def _manual(self, probs):
        m = NaiveForest(ForestParams(n_trees=len(probs)), 0)
        m.n_features_in = 1
        m.trees = [Node(0, 0, None, n0, n1) for n0, n1 in probs]
        return m

    def test_pure_leaf(self):
        m = self._manual([(0, 5)])
        assert np.all(m.predict_proba(np.zeros((3, 1))) == 1.0)

    def test_mean_of_trees_and_tie(self):
        m = self._manual([(0, 3), (3, 0)])
        assert m.predict_proba(np.zeros((1, 1)))[0] == 0.5
        assert m.predict(np.zeros((1, 1)))[0] == 1

    def test_threshold_rule(self):
        assert self._manual([(3, 7)]).predict(np.zeros((1, 1)))[0] == 1
        assert self._manual([(7, 3)]).predict(np.zeros((1, 1)))[0] == 0

    def test_dimension_mismatch(self, tiny):
        m = fit(tiny)
        with pytest.raises(ArgumentError):
            m.predict_proba(np.zeros((2, 3)))

    def test_unfitted(self):
        with pytest.raises(StateError):
            DareForest().predict(np.zeros((1, 1)))

    @given(st.integers(0, 10**6))
    def test_bounds(self, seed):
        ds, params = random_instance(np.random.default_rng(seed))
        p = fit(ds, params, seed).predict_proba(np.random.default_rng(seed).normal(size=(20, ds.n_features)))
        assert np.all((p >= 0) & (p <= 1))


class TestDelete:
    def test_counts_only_deletion(self):
        ds = generate_synthetic(150, 6, 2.0, seed=1)
        params = ForestParams(n_trees=3, max_depth=6)
        for rid in ds.row_ids:
            m = DareForest(params, 0).fit(ds)
            before = _shape(m)
            report = m.delete(int(rid))
            if report.subtrees_retrained == 0:
                assert _shape(m) == before
                assert report.nodes_updated > 0
                assert forests_equal(m, DareForest(params, 0).fit(ds.without_ids([rid])))
                return
        pytest.fail("no deletion left every split in place")

    def test_matches_scratch(self):
        ds = generate_synthetic(120, 8, 1.0, seed=3)
        m = DareForest(ForestParams(n_trees=4, max_depth=6), 9).fit(ds)
        gone = [int(r) for r in ds.row_ids[::3]]
        m.delete_many(gone)
        scratch = DareForest(m.params, 9).fit(ds.without_ids(gone))
        assert forests_equal(m, scratch)
        assert np.array_equal(m.predict_proba(ds), scratch.predict_proba(ds))

    def test_all_but_one(self):
        ds = generate_synthetic(20, 3, 1.0, seed=0)
        m = DareForest(ForestParams(n_trees=3), 0).fit(ds)
        keep = int(ds.row_ids[7])
        for rid in ds.row_ids:
            if rid != keep:
                m.delete(int(rid))
        for t in m.trees:
            assert t.is_leaf and list(m.row_ids[t.rows]) == [keep]

    def test_delete_everything(self):
        ds = generate_synthetic(4, 2, 1.0, seed=0)
        m = fit(ds)
        m.delete_many(ds.row_ids)
        assert m.n_live == 0
        with pytest.raises(StateError):
            m.predict(ds)

    def test_unknown_and_double(self, tiny):
        m = fit(tiny)
        with pytest.raises(ArgumentError):
            m.delete(999)
        m.delete(10)
        with pytest.raises(ArgumentError):
            m.delete(10)
        assert 10 not in m and 11 in m

    def test_order_independence(self):
        ds = generate_synthetic(60, 5, 1.0, seed=8)
        params = ForestParams(n_trees=3, max_depth=5)
        pair = [int(ds.row_ids[4]), int(ds.row_ids[31])]
        models = []
        for order in itertools.permutations(pair):
            m = DareForest(params, 2).fit(ds)
            m.delete_many(order)
            models.append(m)
        assert forests_equal(*models)

    def test_node_stats_conservation(self):
        ds = generate_synthetic(50, 4, 1.0, seed=5)
        m = DareForest(ForestParams(n_trees=2, max_depth=4), 1).fit(ds)
        m.delete_many(ds.row_ids[:10])
        for t, root in enumerate(m.trees):
            for node in root.iter_nodes():
                stats = m.node_stats(t, node)
                for c in stats.candidates:
                    assert c.left_counts[0] + c.right_counts[0] == node.n0
                    assert c.left_counts[1] + c.right_counts[1] == node.n1

    def test_invariant_check_catches_corruption(self):
        ds = generate_synthetic(40, 4, 1.0, seed=5)
        m = DareForest(ForestParams(n_trees=1, max_depth=3), 1).fit(ds)
        m.check_invariants()
        m.trees[0].n1 += 1
        with pytest.raises(InvariantError):
            m.check_invariants()

    @given(st.integers(0, 2**32 - 1))
    def test_exactness_property(self, seed):
        rng = np.random.default_rng(seed)
        ds, params = random_instance(rng)
        m = DareForest(params, seed).fit(ds)
        gone = rng.permutation(ds.row_ids)[: rng.integers(0, ds.rows)]
        for rid in gone:
            m.delete(int(rid))
        m.check_invariants()
        scratch = DareForest(params, seed).fit(ds.without_ids(gone))
        assert forests_equal(m, scratch)
        assert np.array_equal(m.predict_proba(ds.features), scratch.predict_proba(ds.features))


class TestNaiveRetrain:
    def test_empty_deletion(self):
        ds = generate_synthetic(40, 4, 1.0, seed=1)
        assert forests_equal(naive_retrain(ds, [], seed=3), NaiveForest(seed=3).fit(ds))

    def test_all_but_two(self):
        ds = generate_synthetic(30, 4, 1.0, seed=1)
        m = naive_retrain(ds, ds.row_ids[2:], seed=0)
        assert all(t.n0 + t.n1 == 2 for t in m.trees)

    def test_deterministic_and_unknown(self):
        ds = generate_synthetic(30, 4, 1.0, seed=1)
        assert forests_equal(naive_retrain(ds, ds.row_ids[:5], seed=4), naive_retrain(ds, ds.row_ids[:5], seed=4))
        with pytest.raises(ArgumentError):
            naive_retrain(ds, [10**6])
