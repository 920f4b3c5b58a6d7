"""Labeled datasets: generation, CSV ingestion, hashing encoder, splitting and row deletion.

All mutating helpers return new :class:`Dataset` values; inputs are never modified.

Binary container layout (little-endian)::

    offset  size        field
    0       8           magic  b"ULDSET\\x00\\x01"
    8       4           u32 format version (1)
    12      8           u64 rows
    20      8           u64 cols
    28      8*rows*cols f64 features, row-major
    ...     rows        u8 labels
    ...     8*rows      u64 row_ids
"""

import csv
import hashlib
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._seeding import rng_for
from .errors import ArgumentError, FormatError, SchemaError

MAGIC = b"ULDSET\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIQQ")
_TOKEN_RE = re.compile(r"\S+")

DEFAULT_SCHEMA = {"user_id": "user_id", "label": "label", "text": "text"}


@dataclass(frozen=True)
class RawRecord:
    user_id: str
    label: int
    text: str


@dataclass(frozen=True)
class IngestResult:
    records: list
    skipped: int = 0


@dataclass(frozen=True)
class EncodingConfig:
    num_hash_features: int = 64
    seed: int = 0
    binarize: bool = True

    def __post_init__(self):
        if self.num_hash_features < 2:
            raise ArgumentError("num_hash_features must be >= 2")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense float64 features, {0,1} labels and stable source row ids."""

    features: np.ndarray
    labels: np.ndarray
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        # "+ 0.0" folds -0.0 into 0.0 so equal values share one bit pattern
        X = np.ascontiguousarray(self.features, dtype=np.float64) + 0.0
        if X.ndim != 2:
            raise ArgumentError(f"features must be 2-D, got shape {X.shape}")
        y = np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(-1)
        ids = self.row_ids
        ids = np.arange(X.shape[0], dtype=np.uint64) if ids is None else np.ascontiguousarray(ids, dtype=np.uint64)
        if not (X.shape[0] == y.shape[0] == ids.shape[0]):
            raise ArgumentError(
                f"row count mismatch: features {X.shape[0]}, labels {y.shape[0]}, row_ids {ids.shape[0]}"
            )
        if X.shape[1] < 1:
            raise ArgumentError("dataset needs at least one feature column")
        if not np.all(np.isfinite(X)):
            raise ArgumentError("feature values must be finite")
        if np.any(y > 1):
            raise ArgumentError("labels must be 0 or 1")
        if np.unique(ids).size != ids.size:
            raise ArgumentError("row_ids must be unique")
        for arr in (X, y, ids):
            arr.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "row_ids", ids)

    @property
    def rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def take(self, positions):
        """Rows at ``positions`` (in the given order)."""
        positions = np.asarray(positions, dtype=np.intp)
        return Dataset(self.features[positions], self.labels[positions], self.row_ids[positions])

    def without_ids(self, ids):
        ids = np.asarray(list(ids), dtype=np.uint64)
        keep = ~np.isin(self.row_ids, ids)
        return self.take(np.flatnonzero(keep))

    def digest(self):
        """SHA-256 hex digest of the binary container encoding."""
        return hashlib.sha256(to_bytes(self)).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.row_ids, other.row_ids)
        )

    __hash__ = None


def _check_seed(seed):
    if seed < 0 or seed >= 1 << 64:
        raise ArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")


def generate_synthetic(n_rows, d, class_sep=1.0, seed=0):
    """Two Gaussian clouds with unit covariance whose means are ``class_sep`` apart.

    Labels are balanced (``n_rows // 2`` positives), so both classes are present
    whenever ``n_rows >= 2``. The mean offset lies along the all-ones diagonal.
    """
    if n_rows < 2 or d < 1:
        raise ArgumentError(f"need n_rows >= 2 and d >= 1, got n_rows={n_rows}, d={d}")
    _check_seed(seed)
    rng = rng_for(seed, 0)
    labels = np.zeros(n_rows, dtype=np.uint8)
    labels[: n_rows // 2] = 1
    labels = rng.permutation(labels)
    direction = np.full(d, 1.0 / math.sqrt(d))
    X = rng.standard_normal((n_rows, d))
    X += np.outer(labels.astype(np.float64) - 0.5, direction) * class_sep
    return Dataset(X, labels, np.arange(n_rows, dtype=np.uint64))


def ingest_csv(path, schema=None):
    """Read ``user_id,label,text`` records from a headed CSV file.

    ``schema`` maps the logical names ``user_id``, ``label`` and ``text`` to the
    column names in the file. Rows whose label is not 0/1 or whose text is blank
    are skipped and counted.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    records = []
    skipped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [schema[k] for k in ("user_id", "label", "text") if schema[k] not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}; header is {header}")
        for row in reader:
            raw_label = (row.get(schema["label"]) or "").strip()
            text = (row.get(schema["text"]) or "").strip()
            if raw_label not in ("0", "1") or not text:
                skipped += 1
                continue
            records.append(RawRecord(row.get(schema["user_id"]) or "", int(raw_label), text))
    return IngestResult(records, skipped)


def _bucket(token, cfg):
    key = cfg.seed.to_bytes(8, "little")
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little") % cfg.num_hash_features


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


def encode(records, cfg=None):
    """Hash whitespace tokens of each record's text into ``cfg.num_hash_features`` buckets."""
    cfg = cfg or EncodingConfig()
    records = list(records)
    if not records:
        raise ArgumentError("cannot encode an empty record sequence")
    _check_seed(cfg.seed)
    X = np.zeros((len(records), cfg.num_hash_features), dtype=np.float64)
    cache = {}
    for i, rec in enumerate(records):
        for tok in tokenize(rec.text):
            b = cache.get(tok)
            if b is None:
                b = cache[tok] = _bucket(tok, cfg)
            X[i, b] += 1.0
    if cfg.binarize:
        X = (X > 0).astype(np.float64)
    labels = np.array([r.label for r in records], dtype=np.uint8)
    return Dataset(X, labels, np.arange(len(records), dtype=np.uint64))


def train_test_split(ds, test_fraction, seed=0):
    if ds.rows < 2:
        raise ArgumentError("need at least 2 rows to split")
    if not 0.0 < test_fraction < 1.0:
        raise ArgumentError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    _check_seed(seed)
    n_test = min(max(round(ds.rows * test_fraction), 1), ds.rows - 1)
    perm = rng_for(seed, 1).permutation(ds.rows)
    test_pos = np.sort(perm[:n_test])
    train_pos = np.sort(perm[n_test:])
    return ds.take(train_pos), ds.take(test_pos)


def _sample_rows(ds, n, rng):
    return np.sort(rng.choice(ds.rows, size=n, replace=False))


def reduce_to_target_size(train, test, target_size, seed=0, test_ceiling=None):
    """Subsample ``train`` to ``min(target_size, rows)`` rows.

    The test set is only reduced when it exceeds ``test_ceiling``; by default it is
    returned untouched so every trial scores against the same rows.
    """
    if target_size < 1:
        raise ArgumentError("target_size must be >= 1")
    _check_seed(seed)
    n = min(target_size, train.rows)
    new_train = train if n == train.rows else train.take(_sample_rows(train, n, rng_for(seed, 2)))
    new_test = test
    if test_ceiling is not None and test.rows > test_ceiling:
        new_test = test.take(_sample_rows(test, test_ceiling, rng_for(seed, 3)))
    return new_train, new_test


def delete_n_elements(train, n, seed=0):
    """Remove ``n`` uniformly chosen rows; returns the reduced set and the removed ids in draw order."""
    if n < 0 or n > train.rows:
        raise ArgumentError(f"cannot delete {n} rows from a dataset of {train.rows}")
    _check_seed(seed)
    chosen = rng_for(seed, 4).choice(train.rows, size=n, replace=False)
    keep = np.ones(train.rows, dtype=bool)
    keep[chosen] = False
    return train.take(np.flatnonzero(keep)), [int(i) for i in train.row_ids[chosen]]


def delete_percentage(train, test, pct, seed=0):
    """Delete ``floor(rows * pct)`` random rows from both ``train`` and ``test``."""
    if not 0.0 <= pct <= 1.0:
        raise ArgumentError(f"pct must lie in [0, 1], got {pct}")
    out = []
    for k, ds in enumerate((train, test)):
        n = int(ds.rows * pct)
        chosen = rng_for(seed, 5, k).choice(ds.rows, size=n, replace=False)
        keep = np.ones(ds.rows, dtype=bool)
        keep[chosen] = False
        out.append(ds.take(np.flatnonzero(keep)))
    return tuple(out)


def to_bytes(ds):
    return b"".join(
        (
            _HEADER.pack(MAGIC, VERSION, ds.rows, ds.n_features),
            ds.features.astype("<f8", copy=False).tobytes(),
            ds.labels.tobytes(),
            ds.row_ids.astype("<u8", copy=False).tobytes(),
        )
    )


def from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise FormatError(f"container truncated: {len(buf)} bytes, header needs {_HEADER.size}", len(buf))
    magic, version, rows, cols = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError("bad magic bytes, not a dataset container", 0)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", 8)
    expected = _HEADER.size + rows * cols * 8 + rows + rows * 8
    if len(buf) != expected:
        raise FormatError(
            f"container size {len(buf)} does not match header ({rows}x{cols} needs {expected})",
            min(len(buf), expected),
        )
    off = _HEADER.size
    X = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
    off += rows * cols * 8
    y = np.frombuffer(buf, dtype=np.uint8, count=rows, offset=off)
    off += rows
    ids = np.frombuffer(buf, dtype="<u8", count=rows, offset=off)
    try:
        return Dataset(X.astype(np.float64), y.copy(), ids.astype(np.uint64))
    except ArgumentError as exc:
        raise FormatError(f"invalid dataset contents: {exc}", _HEADER.size) from exc


def save(ds, path):
    Path(path).write_bytes(to_bytes(ds))


def load(path):
    return from_bytes(Path(path).read_bytes())


def export_csv(ds, path):
    """Write ``row_id,label,f0..f{d-1}`` with round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_id", "label"] + [f"f{j}" for j in range(ds.n_features)])
        for rid, lab, row in zip(ds.row_ids, ds.labels, ds.features):
            w.writerow([int(rid), int(lab)] + [repr(float(v)) for v in row])


def import_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["row_id", "label"]:
            raise SchemaError(f"{path}: expected header starting with row_id,label")
        rows = [r for r in reader if r]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    ids = np.array([int(r[0]) for r in rows], dtype=np.uint64)
    y = np.array([int(r[1]) for r in rows], dtype=np.uint8)
    X = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64)
    return Dataset(X, y, ids)
