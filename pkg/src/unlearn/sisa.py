"""Sharded, isolated, sliced and aggregated (SISA) ensembles of forests.

Rows are assigned to shards, and within a shard to slices, by a seeded hash of
their row id. Assignment therefore never changes when other rows are deleted,
which makes ``sisa_delete`` exact: the ensemble after a deletion equals
``sisa_fit`` on the reduced training set with the same config.

With the default :class:`~unlearn.dare.DareForest` constituent a deletion is
forwarded to the owning shard's forest. With a :class:`~unlearn.dare.NaiveForest`
constituent the shard keeps one model per nested slice prefix and retrains the
prefixes from the first slice holding the deleted row onwards.
"""

from dataclasses import dataclass, field

import numpy as np

from ._seeding import U64_MASK, mix_seed
from .checkpoint import digest, forest_from_bytes, forest_to_bytes, pack, unpack
from .dare import DareForest, DeletionReport, ForestParams, NaiveForest, _as_matrix, forests_equal
from .dataset import from_bytes as dataset_from_bytes
from .dataset import to_bytes as dataset_to_bytes
from .errors import ArgumentError, FormatError, InvariantError, StateError

AGGREGATIONS = ("mean_proba", "majority_vote")
CONSTITUENTS = ("dare", "naive")


@dataclass(frozen=True)
class SisaConfig:
    n_shards: int = 1
    n_slices: int = 1
    constituent_params: ForestParams = field(default_factory=ForestParams)
    seed: int = 0
    aggregation: str = "mean_proba"
    constituent: str = "dare"

    def __post_init__(self):
        if self.n_shards < 1 or self.n_slices < 1:
            raise ArgumentError("n_shards and n_slices must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ArgumentError(f"aggregation must be one of {AGGREGATIONS}")
        if self.constituent not in CONSTITUENTS:
            raise ArgumentError(f"constituent must be one of {CONSTITUENTS}")

    def as_dict(self):
        return {
            "n_shards": self.n_shards,
            "n_slices": self.n_slices,
            "constituent_params": self.constituent_params.as_dict(),
            "seed": self.seed,
            "aggregation": self.aggregation,
            "constituent": self.constituent,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["constituent_params"] = ForestParams(**d["constituent_params"])
        return cls(**d)


def assignment_hash(seed, row_ids):
    """Seeded 64-bit hash per row id (splitmix64 over id xor a seed-derived key)."""
    key = mix_seed(seed, 200)
    out = np.empty(len(row_ids), dtype=np.uint64)
    for i, rid in enumerate(row_ids):
        z = ((int(rid) ^ key) + 0x9E3779B97F4A7C15) & U64_MASK
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & U64_MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & U64_MASK
        out[i] = z ^ (z >> 31)
    return out


@dataclass
class Shard:
    """One shard: its live rows (ordered by assignment hash), their slice indices and models.

    ``slice_models[k]`` is trained on the rows of slices ``0..k``; it is only kept
    for naive constituents with more than one slice. ``model`` is the constituent
    trained on the whole shard, or ``None`` once the shard holds no rows.
    """

    index: int
    row_ids: np.ndarray
    slices: np.ndarray
    model: object = None
    slice_models: list = field(default_factory=list)

    @property
    def active(self):
        return self.model is not None

    def prefix_ids(self, k):
        return self.row_ids[self.slices <= k]


class SisaEnsemble:
    """Shard partition plus one isolated constituent forest per shard."""

    def __init__(self, config, train, shards):
        self.config = config
        self.train = train
        self.shards = shards
        self._shard_of = {}
        for sh in shards:
            for rid in sh.row_ids:
                self._shard_of[int(rid)] = sh.index

    @property
    def n_features_in(self):
        return self.train.n_features

    def live_row_ids(self):
        ids = [sh.row_ids for sh in self.shards]
        return np.sort(np.concatenate(ids)) if ids else np.empty(0, np.uint64)

    def shard_of(self, row_id):
        idx = self._shard_of.get(int(row_id))
        if idx is None:
            raise ArgumentError(f"row id {row_id} is not in the ensemble's training set")
        return idx

    def __contains__(self, row_id):
        return int(row_id) in self._shard_of

    def constituent_proba(self, X):
        X = _as_matrix(X, self.n_features_in)
        return [sh.model.predict_proba(X) for sh in self.shards if sh.active]

    def predict_proba(self, X):
        return sisa_predict_proba(self, X)

    def predict(self, X):
        return (sisa_predict_proba(self, X) >= 0.5).astype(np.uint8)

    def delete(self, row_id):
        return sisa_delete(self, row_id)

    def shard_digest(self, index):
        """SHA-256 of shard ``index``'s serialized state (rows, slices and models)."""
        return digest(_shard_bytes(self.shards[index]))

    def check_invariants(self):
        seen = np.concatenate([sh.row_ids for sh in self.shards]) if self.shards else np.empty(0)
        if np.unique(seen).size != seen.size:
            raise InvariantError("shards overlap")
        if set(int(r) for r in seen) != set(self._shard_of):
            raise InvariantError("shard lookup table disagrees with shard membership")
        for sh in self.shards:
            if sh.model is None:
                if sh.row_ids.size:
                    raise InvariantError(f"shard {sh.index} has rows but no model")
                continue
            if isinstance(sh.model, DareForest):
                if not np.array_equal(np.sort(sh.model.live_row_ids()), np.sort(sh.row_ids)):
                    raise InvariantError(f"shard {sh.index}: model was trained on other rows")
                sh.model.check_invariants()
            prev = set()
            for k in range(self.config.n_slices):
                cur = set(int(r) for r in sh.prefix_ids(k))
                if not prev <= cur:
                    raise InvariantError(f"shard {sh.index}: slice prefixes do not nest")
                prev = cur


def _make_model(cfg, shard_index):
    seed = mix_seed(cfg.seed, 300, shard_index)
    cls = DareForest if cfg.constituent == "dare" else NaiveForest
    return cls(cfg.constituent_params, seed)


def _subset(train, ids):
    keep = np.isin(train.row_ids, ids)
    return train.take(np.flatnonzero(keep))


def _train_shard(cfg, train, shard):
    """(Re)train every model of ``shard`` from its current rows."""
    if shard.row_ids.size == 0:
        shard.model = None
        shard.slice_models = []
        return
    if cfg.constituent == "naive" and cfg.n_slices > 1:
        shard.slice_models = []
        for k in range(cfg.n_slices):
            ids = shard.prefix_ids(k)
            shard.slice_models.append(_make_model(cfg, shard.index).fit(_subset(train, ids)) if ids.size else None)
        shard.model = shard.slice_models[-1]
    else:
        shard.slice_models = []
        shard.model = _make_model(cfg, shard.index).fit(_subset(train, shard.row_ids))


def sisa_fit(train, cfg=None):
    """Partition ``train`` by seeded row-id hash and fit one constituent per shard."""
    cfg = cfg or SisaConfig()
    if train.rows < cfg.n_shards:
        raise ArgumentError(f"{train.rows} training rows cannot fill {cfg.n_shards} shards")
    h = assignment_hash(cfg.seed, train.row_ids)
    shard_idx = h % np.uint64(cfg.n_shards)
    slice_idx = (h // np.uint64(cfg.n_shards)) % np.uint64(cfg.n_slices)
    shards = []
    for s in range(cfg.n_shards):
        members = np.flatnonzero(shard_idx == s)
        members = members[np.argsort(h[members], kind="stable")]
        shard = Shard(s, train.row_ids[members].copy(), slice_idx[members].astype(np.int64))
        _train_shard(cfg, train, shard)
        shards.append(shard)
    return SisaEnsemble(cfg, train, shards)


def sisa_predict_proba(ens, X):
    """Aggregate constituent outputs over active shards.

    ``mean_proba`` averages probabilities; ``majority_vote`` returns the fraction of
    constituents whose hard prediction is 1.
    """
    probs = ens.constituent_proba(X)
    if not probs:
        raise StateError("every shard is empty; nothing to predict with")
    stacked = np.vstack(probs)
    if ens.config.aggregation == "majority_vote":
        stacked = (stacked >= 0.5).astype(np.float64)
    return stacked.mean(axis=0)


def sisa_delete(ens, row_id):
    """Unlearn ``row_id``; only the shard that owns it is touched."""
    s = ens.shard_of(row_id)
    shard = ens.shards[s]
    rid = int(row_id)
    at = int(np.flatnonzero(shard.row_ids == np.uint64(rid))[0])
    first_slice = int(shard.slices[at])
    shard.row_ids = np.delete(shard.row_ids, at)
    shard.slices = np.delete(shard.slices, at)
    del ens._shard_of[rid]
    cfg = ens.config
    report = DeletionReport(deletions=1)
    if shard.row_ids.size == 0:
        shard.model = None
        shard.slice_models = []
        return report
    if isinstance(shard.model, DareForest):
        report = shard.model.delete(rid)
        return report
    if cfg.n_slices > 1:
        for k in range(first_slice, cfg.n_slices):
            ids = shard.prefix_ids(k)
            shard.slice_models[k] = _make_model(cfg, s).fit(_subset(ens.train, ids)) if ids.size else None
            report.subtrees_retrained += cfg.constituent_params.n_trees
            report.rows_touched += int(ids.size)
        shard.model = shard.slice_models[-1]
    else:
        shard.model = _make_model(cfg, s).fit(_subset(ens.train, shard.row_ids))
        report.subtrees_retrained += cfg.constituent_params.n_trees
        report.rows_touched += int(shard.row_ids.size)
    return report


def ensembles_equal(a, b):
    """Same config, shard membership, slice layout and constituent structure."""
    if a.config != b.config or len(a.shards) != len(b.shards):
        return False
    for x, z in zip(a.shards, b.shards):
        if not (np.array_equal(x.row_ids, z.row_ids) and np.array_equal(x.slices, z.slices)):
            return False
        if x.active != z.active:
            return False
        if x.active and not forests_equal(x.model, z.model):
            return False
        if len(x.slice_models) != len(z.slice_models):
            return False
        for p, q in zip(x.slice_models, z.slice_models):
            if (p is None) != (q is None) or (p is not None and not forests_equal(p, q)):
                return False
    return True


def _shard_bytes(shard):
    arrays = {"row_ids": shard.row_ids.astype(np.uint64), "slices": shard.slices.astype(np.int64)}
    if shard.model is not None and not shard.slice_models:
        arrays["model"] = np.frombuffer(forest_to_bytes(shard.model), dtype=np.uint8)
    for k, m in enumerate(shard.slice_models):
        if m is not None:
            arrays[f"slice{k}"] = np.frombuffer(forest_to_bytes(m), dtype=np.uint8)
    meta = {"index": shard.index, "n_slice_models": len(shard.slice_models)}
    return pack("sisa_shard", meta, arrays)


def _shard_from_bytes(buf):
    kind, meta, a = unpack(buf)
    if kind != "sisa_shard":
        raise FormatError(f"expected a shard record, found {kind!r}")
    shard = Shard(int(meta["index"]), a["row_ids"], a["slices"])
    if "model" in a:
        shard.model = forest_from_bytes(a["model"].tobytes())
    n = int(meta["n_slice_models"])
    if n:
        shard.slice_models = [
            forest_from_bytes(a[f"slice{k}"].tobytes()) if f"slice{k}" in a else None for k in range(n)
        ]
        shard.model = shard.slice_models[-1]
    return shard


def ensemble_to_bytes(ens):
    arrays = {"train": np.frombuffer(dataset_to_bytes(ens.train), dtype=np.uint8)}
    for sh in ens.shards:
        arrays[f"shard{sh.index}"] = np.frombuffer(_shard_bytes(sh), dtype=np.uint8)
    return pack("sisa_ensemble", {"config": ens.config.as_dict()}, arrays)


def ensemble_from_bytes(buf):
    kind, meta, a = unpack(buf)
    if kind != "sisa_ensemble":
        raise FormatError(f"expected a SISA ensemble checkpoint, found {kind!r}")
    cfg = SisaConfig.from_dict(meta["config"])
    train = dataset_from_bytes(a["train"].tobytes())
    shards = [_shard_from_bytes(a[f"shard{s}"].tobytes()) for s in range(cfg.n_shards)]
    return SisaEnsemble(cfg, train, shards)


def subset_ensemble_train(ens):
    """The ensemble's live training rows as a :class:`Dataset` (original order)."""
    return _subset(ens.train, ens.live_row_ids())

