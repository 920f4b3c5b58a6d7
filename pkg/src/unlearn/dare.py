"""Removal-enabled random forests with exact single-row deletion.

Every internal node caches, for each of its tree's sampled features, a histogram
of the node's training values: the sorted unique values together with the number
of label-0 and label-1 rows holding each value. Split candidates and their
left/right label counts are prefix sums over that histogram, so removing a row
only has to decrement one bin per feature on each node of its root-to-leaf path.
When the decrement changes the split a fresh fit would pick at a node, the
subtree below it is rebuilt from the node's surviving rows.

Candidate thresholds are midpoints of the ``thresholds_per_feature`` gaps (between
adjacent unique values) with the lowest seeded priority. A gap's priority hashes
its upper value with the tree seed, the node's path and the feature, so deleting
a row only perturbs candidates adjacent to that row's value.

Training is a deterministic function of (rows, features, seed), so a forest that
has had rows deleted is structurally identical to one fitted without them.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._seeding import U64_MASK, mix_seed, rng_for
from .dataset import Dataset
from .errors import ArgumentError, InvariantError, StateError

# Gains at or below this are treated as "no useful split"; absorbs rounding noise
# such as 0.5 - 0.5/3 - 1/3 evaluating to 5.6e-17.
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class ForestParams:
    """Hyper-parameters shared by :class:`DareForest` and :class:`NaiveForest`.

    ``max_features_per_tree=None`` resolves to ``ceil(sqrt(d))`` at fit time.
    """

    n_trees: int = 10
    max_depth: int = 10
    max_features_per_tree: int = None
    thresholds_per_feature: int = 8
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ArgumentError("n_trees must be >= 1")
        if self.max_depth < 0:
            raise ArgumentError("max_depth must be >= 0")
        if self.thresholds_per_feature < 1:
            raise ArgumentError("thresholds_per_feature must be >= 1")
        if self.min_samples_leaf < 1:
            raise ArgumentError("min_samples_leaf must be >= 1")
        if self.max_features_per_tree is not None and self.max_features_per_tree < 1:
            raise ArgumentError("max_features_per_tree must be >= 1")

    def features_for(self, d):
        k = self.max_features_per_tree or math.ceil(math.sqrt(d))
        return min(k, d)

    def as_dict(self):
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "max_features_per_tree": self.max_features_per_tree,
            "thresholds_per_feature": self.thresholds_per_feature,
            "min_samples_leaf": self.min_samples_leaf,
        }


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    left_counts: tuple
    right_counts: tuple


@dataclass(frozen=True)
class NodeStats:
    n0: int
    n1: int
    candidates: list


@dataclass
class DeletionReport:
    nodes_updated: int = 0
    subtrees_retrained: int = 0
    rows_touched: int = 0
    deletions: int = 0

    def __add__(self, other):
        return DeletionReport(
            self.nodes_updated + other.nodes_updated,
            self.subtrees_retrained + other.subtrees_retrained,
            self.rows_touched + other.rows_touched,
            self.deletions + other.deletions,
        )


def gini(n0, n1):
    n = n0 + n1
    if n == 0:
        return 0.0
    return 1.0 - (n0 * n0 + n1 * n1) / (n * n)


def gini_gain(parent, left, right):
    """Impurity decrease of splitting ``parent`` label counts into ``left``/``right``.

    Counts are ``(n0, n1)`` pairs. Returns 0.0 when either child is empty.
    """
    p0, p1 = parent
    l0, l1 = left
    r0, r1 = right
    if l0 + r0 != p0 or l1 + r1 != p1 or min(p0, p1, l0, l1, r0, r1) < 0:
        raise InvariantError(f"child counts {left} + {right} do not sum to parent {parent}")
    n = p0 + p1
    if n < 1:
        raise InvariantError("parent node holds no rows")
    nl, nr = l0 + l1, r0 + r1
    if nl == 0 or nr == 0:
        return 0.0
    return gini(p0, p1) - (nl / n) * gini(l0, l1) - (nr / n) * gini(r0, r1)


def _child_key(key, side):
    return int(K.smix(np.uint64(key ^ ((side + 1) * 0x94D049BB133111EB & U64_MASK))))


class Node:
    """Tree node. ``feature == -1`` marks a leaf.

    ``rows`` holds sorted training positions reaching the node and ``key`` is a
    seeded hash of the node's path from the root. ``hist`` is the flat histogram
    cache ``(values, count0, count1, gap_priority, slot_offsets)``; it is ``None``
    on leaves that are leaves for structural reasons (depth, size, purity).
    """

    __slots__ = ("depth", "key", "rows", "n0", "n1", "feature", "threshold", "left", "right", "hist")

    def __init__(self, depth, key, rows, n0, n1):
        self.depth = depth
        self.key = key
        self.rows = rows
        self.n0 = n0
        self.n1 = n1
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.hist = None

    @property
    def is_leaf(self):
        return self.feature < 0

    @property
    def proba(self):
        return self.n1 / (self.n0 + self.n1)

    def iter_nodes(self):
        """Pre-order traversal (node, left subtree, right subtree)."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def leaves(self):
        return [n for n in self.iter_nodes() if n.is_leaf]

    def node_count(self):
        return sum(1 for _ in self.iter_nodes())


class _TreeBuilder:
    """Greedy Gini growth and row removal for one tree's sampled feature columns."""

    def __init__(self, X, y, feats, params, keep_cache=True):
        self.y = np.ascontiguousarray(y, dtype=np.uint8)
        self.feats = np.ascontiguousarray(feats, dtype=np.int64)
        self.cols = np.ascontiguousarray(X[:, self.feats].T)
        self.params = params
        self.keep_cache = keep_cache

    def forced_leaf(self, depth, n0, n1):
        return (
            depth >= self.params.max_depth
            or n0 + n1 < 2 * self.params.min_samples_leaf
            or n0 == 0
            or n1 == 0
        )

    def histogram(self, rows, key):
        return K.build_hist(self.cols, self.y, rows, self.feats, np.uint64(key))

    def decide(self, n0, n1, hist):
        """Best ``(feature_slot, threshold)``, or ``None`` when no split has positive gain."""
        slot, thr = K.best_split(
            n0, n1, *hist, self.params.thresholds_per_feature, self.params.min_samples_leaf, MIN_GAIN
        )
        return None if slot < 0 else (int(slot), float(thr))

    def candidates(self, hist):
        return K.candidates(*hist, self.params.thresholds_per_feature)

    def build(self, rows, depth, key):
        n1 = int(np.count_nonzero(self.y[rows]))
        n0 = rows.size - n1
        node = Node(depth, key, rows, n0, n1)
        if self.forced_leaf(depth, n0, n1):
            return node
        hist = self.histogram(rows, key)
        choice = self.decide(n0, n1, hist)
        if self.keep_cache:
            node.hist = hist
        if choice is None:
            return node
        slot, thr = choice
        node.feature = int(self.feats[slot])
        node.threshold = thr
        go_left = self.cols[slot, rows] <= thr
        node.left = self.build(rows[go_left], depth + 1, _child_key(key, 0))
        node.right = self.build(rows[~go_left], depth + 1, _child_key(key, 1))
        return node

    def delete(self, node, pos, report):
        """Remove training position ``pos`` below ``node``; returns the new subtree root."""
        label = int(self.y[pos])
        root = node
        parent = None
        went_left = False
        while True:
            i = int(np.searchsorted(node.rows, pos))
            node.rows = np.delete(node.rows, i)
            if label:
                node.n1 -= 1
            else:
                node.n0 -= 1
            report.nodes_updated += 1
            if node.hist is None:
                # leaf by depth, size or purity: all three survive a removal
                return root
            node.hist = K.remove_row(*node.hist, self.cols, pos, label)
            stale = False
            if self.forced_leaf(node.depth, node.n0, node.n1):
                stale = True
            else:
                choice = self.decide(node.n0, node.n1, node.hist)
                if node.is_leaf:
                    stale = choice is not None
                else:
                    stale = (
                        choice is None
                        or int(self.feats[choice[0]]) != node.feature
                        or choice[1] != node.threshold
                    )
            if stale:
                replacement = self._rebuild(node, report)
                if parent is None:
                    return replacement
                if went_left:
                    parent.left = replacement
                else:
                    parent.right = replacement
                return root
            if node.is_leaf:
                return root
            parent = node
            slot = int(np.searchsorted(self.feats, node.feature))
            went_left = bool(self.cols[slot, pos] <= node.threshold)
            node = node.left if went_left else node.right

    def _rebuild(self, node, report):
        report.subtrees_retrained += 1
        report.rows_touched += int(node.rows.size)
        return self.build(node.rows, node.depth, node.key)


def _as_matrix(X, d):
    if isinstance(X, Dataset):
        X = X.features
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != d:
        raise ArgumentError(f"expected a matrix with {d} feature columns, got shape {X.shape}")
    return X


def flatten_tree(root):
    """Pre-order arrays ``(feature, threshold, left, right, n0, n1)``; children are node indices."""
    nodes = list(root.iter_nodes())
    index = {id(n): i for i, n in enumerate(nodes)}
    m = len(nodes)
    feature = np.empty(m, np.int64)
    threshold = np.zeros(m, np.float64)
    left = np.full(m, -1, np.int64)
    right = np.full(m, -1, np.int64)
    n0 = np.empty(m, np.int64)
    n1 = np.empty(m, np.int64)
    for i, n in enumerate(nodes):
        feature[i] = n.feature
        n0[i] = n.n0
        n1[i] = n.n1
        if not n.is_leaf:
            threshold[i] = n.threshold
            left[i] = index[id(n.left)]
            right[i] = index[id(n.right)]
    return feature, threshold, left, right, n0, n1


def _tree_features(seed, t, d, k):
    return np.sort(rng_for(seed, 100, t).choice(d, size=k, replace=False)).astype(np.int64)


def _root_key(seed, t):
    return mix_seed(seed, 101, t)


class _ForestBase:
    def __init__(self, params=None, seed=0):
        self.params = params or ForestParams()
        self.seed = int(seed)
        self.trees = []
        self.tree_features = []
        self.n_features_in = None
        self._flat = None

    @property
    def is_fitted(self):
        return self.n_features_in is not None

    def _flat_trees(self):
        if self._flat is None:
            flat = []
            for root in self.trees:
                f, t, lft, rgt, n0, n1 = flatten_tree(root)
                with np.errstate(invalid="ignore", divide="ignore"):
                    proba = n1 / (n0 + n1)
                flat.append((f, t, lft, rgt, proba))
            self._flat = flat
        return self._flat

    def predict_proba(self, X):
        """Unweighted mean over trees of each reached leaf's positive-class fraction."""
        if not self.is_fitted:
            raise StateError("model is not fitted")
        X = _as_matrix(X, self.n_features_in)
        if any(t is None for t in self.trees):
            raise StateError("model has no remaining training rows")
        total = np.zeros(X.shape[0])
        for arrays in self._flat_trees():
            total += K.tree_proba(*arrays, X)
        return total / len(self.trees)

    def predict(self, X):
        """Hard labels; a probability of exactly 0.5 maps to 1."""
        return (self.predict_proba(X) >= 0.5).astype(np.uint8)


class DareForest(_ForestBase):
    """Random forest supporting exact removal of individual training rows.

    Each tree sees every training row (no bootstrap) and a seeded subset of
    ``params.features_for(d)`` feature columns. ``delete(row_id)`` leaves the model
    identical to ``DareForest(params, seed).fit(train_without_row)``.

    Not safe for concurrent mutation; reads between deletions are fine.
    """

    def fit(self, train):
        if train.rows < 1:
            raise ArgumentError("cannot fit on an empty dataset")
        self.n_features_in = train.n_features
        self.X = np.array(train.features)
        self.y = np.array(train.labels)
        self.row_ids = np.array(train.row_ids)
        self.alive = np.ones(train.rows, dtype=bool)
        self._init_trees()
        rows = np.arange(train.rows, dtype=np.int64)
        self.trees = [b.build(rows, 0, _root_key(self.seed, t)) for t, b in enumerate(self._builders)]
        return self

    def _init_trees(self, tree_features=None):
        if tree_features is None:
            k = self.params.features_for(self.n_features_in)
            tree_features = [_tree_features(self.seed, t, self.n_features_in, k) for t in range(self.params.n_trees)]
        self.tree_features = tree_features
        self._builders = [_TreeBuilder(self.X, self.y, f, self.params) for f in self.tree_features]
        self._pos = {int(r): i for i, r in enumerate(self.row_ids)}
        self._flat = None

    @property
    def n_live(self):
        return int(np.count_nonzero(self.alive))

    def live_row_ids(self):
        return self.row_ids[self.alive]

    def live_dataset(self):
        """The training rows still present, as a :class:`Dataset` in original order."""
        keep = np.flatnonzero(self.alive)
        return Dataset(self.X[keep], self.y[keep], self.row_ids[keep])

    def __contains__(self, row_id):
        pos = self._pos.get(int(row_id))
        return pos is not None and bool(self.alive[pos])

    def delete(self, row_id):
        """Remove one training row by its id and return a :class:`DeletionReport`."""
        pos = self._pos.get(int(row_id))
        if pos is None:
            raise ArgumentError(f"row id {row_id} is not in the training set")
        if not self.alive[pos]:
            raise ArgumentError(f"row id {row_id} was already deleted")
        self.alive[pos] = False
        self._flat = None
        report = DeletionReport(deletions=1)
        if not self.alive.any():
            self.trees = [None] * len(self.trees)
            return report
        for t, builder in enumerate(self._builders):
            self.trees[t] = builder.delete(self.trees[t], pos, report)
        return report

    def delete_many(self, row_ids):
        report = DeletionReport()
        for rid in row_ids:
            report = report + self.delete(rid)
        return report

    def node_stats(self, tree, node):
        """The cached split candidates of ``node`` (in tree index ``tree``) as :class:`NodeStats`."""
        if node.hist is None:
            return NodeStats(node.n0, node.n1, [])
        builder = self._builders[tree]
        slot, thr, l0, l1 = builder.candidates(node.hist)
        cands = [
            SplitCandidate(int(builder.feats[s]), float(t), (int(a), int(b)), (node.n0 - int(a), node.n1 - int(b)))
            for s, t, a, b in zip(slot, thr, l0, l1)
        ]
        return NodeStats(node.n0, node.n1, cands)

    def check_invariants(self):
        """Raise :class:`InvariantError` if any cached statistic disagrees with the rows it summarizes."""
        live = set(int(r) for r in self.live_row_ids())
        for t, root in enumerate(self.trees):
            if root is None:
                if live:
                    raise InvariantError(f"tree {t} is empty but {len(live)} rows are live")
                continue
            builder = self._builders[t]
            seen = []
            for node in root.iter_nodes():
                if node.n0 + node.n1 < 1:
                    raise InvariantError(f"tree {t}: empty node")
                if node.n1 != int(np.count_nonzero(self.y[node.rows])) or node.n0 + node.n1 != node.rows.size:
                    raise InvariantError(f"tree {t}: node counts disagree with its rows")
                if node.hist is not None:
                    fresh = builder.histogram(node.rows, node.key)
                    if not all(np.array_equal(a, b) for a, b in zip(node.hist, fresh)):
                        raise InvariantError(f"tree {t}: cached histogram disagrees with node rows")
                    for c in self.node_stats(t, node).candidates:
                        if (
                            c.left_counts[0] + c.right_counts[0] != node.n0
                            or c.left_counts[1] + c.right_counts[1] != node.n1
                            or min(c.left_counts + c.right_counts) < 0
                        ):
                            raise InvariantError(f"tree {t}: candidate counts do not sum to node totals")
                if node.is_leaf:
                    seen.extend(int(r) for r in self.row_ids[node.rows])
                    continue
                choice = builder.decide(node.n0, node.n1, node.hist)
                if choice is None or int(builder.feats[choice[0]]) != node.feature or choice[1] != node.threshold:
                    raise InvariantError(f"tree {t}: chosen split is not the best cached candidate")
                if node.left.n0 + node.right.n0 != node.n0 or node.left.n1 + node.right.n1 != node.n1:
                    raise InvariantError(f"tree {t}: child counts do not sum to parent")
            if len(seen) != len(live) or set(seen) != live:
                raise InvariantError(f"tree {t}: leaves do not partition the live training rows")


class NaiveForest(_ForestBase):
    """Plain forest grown by the same algorithm, keeping no deletion caches or leaf rows."""

    def fit(self, train):
        if train.rows < 1:
            raise ArgumentError("cannot fit on an empty dataset")
        d = train.n_features
        self.n_features_in = d
        k = self.params.features_for(d)
        rows = np.arange(train.rows, dtype=np.int64)
        self.tree_features = [_tree_features(self.seed, t, d, k) for t in range(self.params.n_trees)]
        self.trees = []
        for t, feats in enumerate(self.tree_features):
            builder = _TreeBuilder(train.features, train.labels, feats, self.params, keep_cache=False)
            root = builder.build(rows, 0, _root_key(self.seed, t))
            for node in root.iter_nodes():
                node.rows = None
            self.trees.append(root)
        self._flat = None
        return self


def fit(train, params=None, seed=0):
    return DareForest(params, seed).fit(train)


def naive_retrain(train, deleted_ids, params=None, seed=0):
    """Fit a :class:`NaiveForest` from scratch on ``train`` minus ``deleted_ids``."""
    deleted = [int(i) for i in deleted_ids]
    known = set(int(r) for r in train.row_ids)
    unknown = [i for i in deleted if i not in known]
    if unknown:
        raise ArgumentError(f"row ids not in training set: {unknown[:5]}")
    return NaiveForest(params, seed).fit(train.without_ids(deleted))


def trees_equal(a, row_ids_a, b, row_ids_b):
    """Structural equality of two trees, comparing leaf membership by row id."""
    if a is None or b is None:
        return a is None and b is None
    stack = [(a, b)]
    while stack:
        x, z = stack.pop()
        if (x.depth, x.key, x.n0, x.n1, x.feature) != (z.depth, z.key, z.n0, z.n1, z.feature):
            return False
        if not x.is_leaf and x.threshold != z.threshold:
            return False
        if (x.rows is None) != (z.rows is None):
            return False
        if x.rows is not None and not np.array_equal(row_ids_a[x.rows], row_ids_b[z.rows]):
            return False
        if (x.hist is None) != (z.hist is None):
            return False
        if x.hist is not None and any(p.tobytes() != q.tobytes() for p, q in zip(x.hist, z.hist)):
            return False
        if not x.is_leaf:
            stack.append((x.left, z.left))
            stack.append((x.right, z.right))
    return True


def forests_equal(a, b):
    """True when two forests have identical parameters, feature subsets and tree structure."""
    if type(a) is not type(b) or a.params != b.params or a.seed != b.seed:
        return False
    if a.n_features_in != b.n_features_in or len(a.trees) != len(b.trees):
        return False
    if any(not np.array_equal(f, g) for f, g in zip(a.tree_features, b.tree_features)):
        return False
    ids_a = getattr(a, "row_ids", None)
    ids_b = getattr(b, "row_ids", None)
    return all(trees_equal(x, ids_a, z, ids_b) for x, z in zip(a.trees, b.trees))
