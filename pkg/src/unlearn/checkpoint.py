"""Versioned binary checkpoints for forests and SISA ensembles.

Container layout (little-endian)::

    8 bytes   magic b"ULCKPT\\x00\\x01"
    u32       format version
    u32       kind length, then kind (ASCII, e.g. "dare_forest")
    u64       metadata length, then UTF-8 JSON (sorted keys)
    u32       array count, then per array:
                u16 name length, name (ASCII)
                u8 dtype-string length, dtype string (numpy ``dtype.str``)
                u8 ndim, ndim x u64 shape
                raw little-endian data, C order

Serialization is deterministic: identical models produce identical bytes.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .dare import DareForest, ForestParams, NaiveForest, Node
from .errors import FormatError

MAGIC = b"ULCKPT\x00\x01"
VERSION = 1
_ALLOWED_DTYPES = {"<f8", "<i8", "<u8", "|u1", "|b1"}


def pack(kind, meta, arrays):
    out = [MAGIC, struct.pack("<I", VERSION)]
    kb = kind.encode("ascii")
    out.append(struct.pack("<I", len(kb)) + kb)
    mb = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<Q", len(mb)) + mb)
    out.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        dt = arr.dtype.str
        if dt not in _ALLOWED_DTYPES:
            raise TypeError(f"array {name!r}: unsupported dtype {dt}")
        nb = name.encode("ascii")
        db = dt.encode("ascii")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", len(db)) + db)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise FormatError(f"checkpoint truncated while reading {what}", self.off)
        chunk = self.buf[self.off : self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def unpack(buf):
    """Parse a container into ``(kind, meta, arrays)``."""
    r = _Reader(buf)
    if bytes(r.take(8, "magic")) != MAGIC:
        raise FormatError("bad magic bytes, not a checkpoint", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    (klen,) = r.unpack("<I", "kind length")
    kind = bytes(r.take(klen, "kind")).decode("ascii", errors="replace")
    (mlen,) = r.unpack("<Q", "metadata length")
    start = r.off
    try:
        meta = json.loads(bytes(r.take(mlen, "metadata")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}", start) from exc
    (count,) = r.unpack("<I", "array count")
    arrays = {}
    for _ in range(count):
        at = r.off
        (nlen,) = r.unpack("<H", "array name length")
        name = bytes(r.take(nlen, "array name")).decode("ascii", errors="replace")
        (dlen,) = r.unpack("<B", "dtype length")
        dt = bytes(r.take(dlen, "dtype")).decode("ascii", errors="replace")
        if dt not in _ALLOWED_DTYPES:
            raise FormatError(f"array {name!r} has unsupported dtype {dt!r}", at)
        (ndim,) = r.unpack("<B", "ndim")
        shape = r.unpack(f"<{ndim}Q", "shape")
        dtype = np.dtype(dt)
        nbytes = int(np.prod(shape, dtype=np.uint64)) * dtype.itemsize
        data = r.take(nbytes, f"array {name!r}")
        arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    if r.off != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.off} trailing bytes after last array", r.off)
    return kind, meta, arrays


def _params_from(meta):
    return ForestParams(**meta["params"])


def _forest_arrays(model):
    has_rows = isinstance(model, DareForest)
    depth, key, n0, n1, feature, threshold = [], [], [], [], [], []
    rows_len, rows = [], []
    hist_len, hist_parts, offs = [], ([], [], [], []), []
    sizes = []
    for root in model.trees:
        if root is None:
            sizes.append(0)
            continue
        count = 0
        for node in root.iter_nodes():
            count += 1
            depth.append(node.depth)
            key.append(node.key)
            n0.append(node.n0)
            n1.append(node.n1)
            feature.append(node.feature)
            threshold.append(node.threshold if not node.is_leaf else 0.0)
            if has_rows:
                rows_len.append(node.rows.size)
                rows.append(node.rows)
            if node.hist is None:
                hist_len.append(-1)
            else:
                vals, c0, c1, prio, off = node.hist
                hist_len.append(vals.size)
                for part, a in zip(hist_parts, (vals, c0, c1, prio)):
                    part.append(a)
                offs.append(off)
        sizes.append(count)

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.empty(0, dtype)

    arrays = {
        "tree_features": np.array(model.tree_features, dtype=np.int64).reshape(len(model.trees), -1),
        "tree_sizes": np.array(sizes, np.int64),
        "depth": np.array(depth, np.int64),
        "key": np.array(key, np.uint64),
        "n0": np.array(n0, np.int64),
        "n1": np.array(n1, np.int64),
        "feature": np.array(feature, np.int64),
        "threshold": np.array(threshold, np.float64),
        "hist_len": np.array(hist_len, np.int64),
        "hist_vals": cat(hist_parts[0], np.float64),
        "hist_c0": cat(hist_parts[1], np.int64),
        "hist_c1": cat(hist_parts[2], np.int64),
        "hist_prio": cat(hist_parts[3], np.uint64),
        "hist_off": cat(offs, np.int64),
    }
    if has_rows:
        arrays.update(
            rows_len=np.array(rows_len, np.int64),
            rows=cat(rows, np.int64),
            X=model.X,
            y=model.y,
            row_ids=model.row_ids,
            alive=model.alive,
        )
    return arrays


def forest_to_bytes(model):
    kind = "dare_forest" if isinstance(model, DareForest) else "naive_forest"
    meta = {
        "params": model.params.as_dict(),
        "seed": model.seed,
        "n_features_in": model.n_features_in,
    }
    return pack(kind, meta, _forest_arrays(model))


def _preorder_trees(a, with_rows):
    """Inverse of the pre-order node listing written by :func:`_forest_arrays`."""
    n_slots = a["tree_features"].shape[1]
    cursor = {"node": 0, "rows": 0, "hist": 0, "hist_node": 0}
    total = a["depth"].size

    def make():
        i = cursor["node"]
        if i >= total:
            raise FormatError("checkpoint node table ends inside a tree")
        cursor["node"] += 1
        node = Node(int(a["depth"][i]), int(a["key"][i]), None, int(a["n0"][i]), int(a["n1"][i]))
        node.feature = int(a["feature"][i])
        node.threshold = float(a["threshold"][i])
        if with_rows:
            k = int(a["rows_len"][i])
            node.rows = a["rows"][cursor["rows"] : cursor["rows"] + k].copy()
            cursor["rows"] += k
        hl = int(a["hist_len"][i])
        if hl >= 0:
            s, h = cursor["hist"], cursor["hist_node"]
            node.hist = (
                a["hist_vals"][s : s + hl].copy(),
                a["hist_c0"][s : s + hl].copy(),
                a["hist_c1"][s : s + hl].copy(),
                a["hist_prio"][s : s + hl].copy(),
                a["hist_off"][h * (n_slots + 1) : (h + 1) * (n_slots + 1)].copy(),
            )
            cursor["hist"] += hl
            cursor["hist_node"] += 1
        return node

    trees = []
    for size in a["tree_sizes"]:
        if size == 0:
            trees.append(None)
            continue
        start = cursor["node"]
        root = make()
        # each entry is a node whose children are still to be read, plus which side is next
        pending = [[root, 0]] if not root.is_leaf else []
        while pending:
            top = pending[-1]
            child = make()
            if top[1] == 0:
                top[0].left = child
                top[1] = 1
            else:
                top[0].right = child
                pending.pop()
            if not child.is_leaf:
                pending.append([child, 0])
        if cursor["node"] - start != size:
            raise FormatError("checkpoint tree size disagrees with its node table")
        trees.append(root)
    return trees


def forest_from_bytes(buf):
    kind, meta, a = unpack(buf)
    if kind not in ("dare_forest", "naive_forest"):
        raise FormatError(f"expected a forest checkpoint, found {kind!r}")
    return _forest_from(kind, meta, a)


def _forest_from(kind, meta, a):
    params = _params_from(meta)
    cls = DareForest if kind == "dare_forest" else NaiveForest
    model = cls(params, int(meta["seed"]))
    model.n_features_in = int(meta["n_features_in"])
    features = [row.copy() for row in a["tree_features"]]
    try:
        model.trees = _preorder_trees(a, with_rows=cls is DareForest)
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(f"inconsistent forest checkpoint: {exc}") from exc
    if cls is DareForest:
        model.X = a["X"]
        model.y = a["y"]
        model.row_ids = a["row_ids"]
        model.alive = a["alive"]
        model._init_trees(features)
    else:
        model.tree_features = features
        model._flat = None
    return model


def digest(buf):
    return hashlib.sha256(buf).hexdigest()


def model_digest(model):
    """SHA-256 of a forest's checkpoint bytes."""
    return digest(forest_to_bytes(model))


def save_forest(model, path):
    Path(path).write_bytes(forest_to_bytes(model))


def load_forest(path):
    return forest_from_bytes(Path(path).read_bytes())

