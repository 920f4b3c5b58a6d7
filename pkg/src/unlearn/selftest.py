"""Quick release checks: exact deletion against scratch retraining, the percent-change formula, round-trips."""

import math
import time

import numpy as np

from . import checkpoint, dataset
from ._seeding import rng_for
from .bench import percent_change
from .dare import DareForest, ForestParams, forests_equal
from .dataset import Dataset
from .errors import InvariantError
from .sisa import SisaConfig, ensemble_from_bytes, ensemble_to_bytes, ensembles_equal, sisa_fit


def random_instance(rng):
    """A small random dataset and forest params for oracle checks."""
    n = int(rng.integers(2, 121))
    d = int(rng.integers(1, 13))
    kind = rng.integers(3)
    if kind == 0:
        X = rng.integers(0, 2, size=(n, d)).astype(float)
    elif kind == 1:
        X = rng.integers(0, 5, size=(n, d)).astype(float)
    else:
        X = rng.normal(size=(n, d))
    y = rng.integers(0, 2, size=n).astype(np.uint8)
    ids = rng.permutation(10 * n)[:n]
    params = ForestParams(
        n_trees=int(rng.integers(1, 4)),
        max_depth=int(rng.integers(0, 7)),
        thresholds_per_feature=int(rng.integers(1, 6)),
        min_samples_leaf=int(rng.integers(1, 4)),
    )
    return Dataset(X, y, ids), params


class Checks:
    def __init__(self):
        self.passed = 0
        self.failed = []

    def __call__(self, name, ok):
        if ok:
            self.passed += 1
        else:
            self.failed.append(name)


def _exactness(checks, rng, n_instances, corrupt_counts):
    for i in range(n_instances):
        train, params = random_instance(rng)
        seed = int(rng.integers(2**32))
        model = DareForest(params, seed).fit(train)
        if corrupt_counts and i == 0:
            root = model.trees[0]
            if root.hist is not None:
                root.hist[1][0] += 1
            else:
                root.n0 += 1
        n_del = int(rng.integers(0, int(0.75 * train.rows) + 1))
        order = rng.permutation(train.row_ids)[:n_del]
        try:
            for rid in order:
                model.delete(int(rid))
            model.check_invariants()
            checks(f"count conservation #{i}", True)
        except (InvariantError, IndexError, ValueError):
            checks(f"count conservation #{i}", False)
            continue
        scratch = DareForest(params, seed).fit(train.without_ids(order))
        same = forests_equal(model, scratch)
        same = same and np.array_equal(model.predict_proba(train.features), scratch.predict_proba(train.features))
        checks(f"delete equals scratch #{i}", same)


def _percent_change(checks, rng):
    checks("percent_change(0.80, 0.84) == 5.0", percent_change(0.80, 0.84) == 5.0)
    cs = 1.0 - rng.random(200)
    checks("percent_change(c, c) == 0", all(percent_change(c, c) == 0.0 for c in cs))
    checks("percent_change(0, c) undefined", math.isnan(percent_change(0.0, 0.5)))


def _round_trips(checks, rng):
    ds = dataset.generate_synthetic(60, 5, class_sep=2.0, seed=int(rng.integers(1000)))
    checks("dataset container round-trip", dataset.from_bytes(dataset.to_bytes(ds)) == ds)
    model = DareForest(ForestParams(n_trees=3, max_depth=4), 7).fit(ds)
    model.delete(int(ds.row_ids[0]))
    buf = checkpoint.forest_to_bytes(model)
    back = checkpoint.forest_from_bytes(buf)
    checks("forest checkpoint round-trip", checkpoint.forest_to_bytes(back) == buf and forests_equal(model, back))
    ens = sisa_fit(ds, SisaConfig(n_shards=2, n_slices=2, constituent_params=ForestParams(n_trees=2), seed=3))
    ens.delete(int(ds.row_ids[1]))
    ebuf = ensemble_to_bytes(ens)
    checks("ensemble checkpoint round-trip", ensembles_equal(ens, ensemble_from_bytes(ebuf)))


def run_selftest(n_instances=40, seed=0, corrupt_counts=False):
    """Run every check; returns ``(passed, failed_names, seconds)``.

    ``corrupt_counts`` damages one cached count before deleting, as a negative
    control: the count-conservation check must then fail.
    """
    start = time.perf_counter()
    checks = Checks()
    rng = rng_for(seed, 900)
    _exactness(checks, rng, n_instances, corrupt_counts)
    _percent_change(checks, rng)
    _round_trips(checks, rng)
    return checks.passed, checks.failed, time.perf_counter() - start
