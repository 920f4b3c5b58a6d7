"""Compiled per-node kernels for the removal-enabled trees.

A node's cache is a flat histogram over its tree's sampled features: for feature
slot ``s`` the entries ``off[s]:off[s+1]`` hold the sorted unique training values
at the node (``vals``), the label-0 and label-1 row counts per value (``c0``,
``c1``) and a seeded priority for the gap just below each value (``prio``).
"""

import numpy as np
from numba import njit

_C0 = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


@njit(cache=True)
def smix(z):
    z = z + _C0
    z = (z ^ (z >> _S30)) * _C1
    z = (z ^ (z >> _S27)) * _C2
    return z ^ (z >> _S31)


@njit(cache=True)
def build_hist(cols, y, rows, feats, key):
    n_slots = cols.shape[0]
    n = rows.shape[0]
    vals = np.empty(n_slots * n, np.float64)
    c0 = np.zeros(n_slots * n, np.int64)
    c1 = np.zeros(n_slots * n, np.int64)
    off = np.zeros(n_slots + 1, np.int64)
    labels = np.empty(n, np.uint8)
    for i in range(n):
        labels[i] = y[rows[i]]
    v = np.empty(n, np.float64)
    m = 0
    for s in range(n_slots):
        for i in range(n):
            v[i] = cols[s, rows[i]]
        order = np.argsort(v)
        start = m
        for j in range(n):
            i = order[j]
            if m == start or v[i] != vals[m - 1]:
                vals[m] = v[i]
                m += 1
            if labels[i]:
                c1[m - 1] += 1
            else:
                c0[m - 1] += 1
        off[s + 1] = m
    vals = vals[:m].copy()
    c0 = c0[:m].copy()
    c1 = c1[:m].copy()
    prio = np.empty(m, np.uint64)
    bits = vals.view(np.uint64)
    for s in range(n_slots):
        kf = smix(key ^ smix(np.uint64(feats[s]) + np.uint64(1)))
        for j in range(off[s], off[s + 1]):
            prio[j] = smix(bits[j] ^ kf)
    return vals, c0, c1, prio, off


@njit(cache=True)
def _select_gaps(prio, a, b, k):
    """Local indices ``i`` (gap between entries a+i and a+i+1) of the k lowest-priority gaps, ascending."""
    n_gaps = b - a - 1
    if n_gaps <= 0:
        return np.empty(0, np.int64)
    if n_gaps <= k:
        return np.arange(n_gaps)
    best_p = np.empty(k, np.uint64)
    best_i = np.empty(k, np.int64)
    filled = 0
    for g in range(n_gaps):
        p = prio[a + g + 1]
        if filled < k:
            j = filled
            filled += 1
        elif p < best_p[k - 1] or (p == best_p[k - 1] and g < best_i[k - 1]):
            j = k - 1
        else:
            continue
        while j > 0 and (best_p[j - 1] > p or (best_p[j - 1] == p and best_i[j - 1] > g)):
            best_p[j] = best_p[j - 1]
            best_i[j] = best_i[j - 1]
            j -= 1
        best_p[j] = p
        best_i[j] = g
    return np.sort(best_i)


@njit(cache=True)
def candidates(vals, c0, c1, prio, off, k):
    """All cached split candidates as parallel arrays (slot, threshold, left n0, left n1)."""
    n_slots = off.shape[0] - 1
    total = 0
    picks = []
    for s in range(n_slots):
        sel = _select_gaps(prio, off[s], off[s + 1], k)
        picks.append(sel)
        total += sel.shape[0]
    slot = np.empty(total, np.int64)
    thr = np.empty(total, np.float64)
    l0 = np.empty(total, np.int64)
    l1 = np.empty(total, np.int64)
    t = 0
    for s in range(n_slots):
        sel = picks[s]
        a = off[s]
        run0 = 0
        run1 = 0
        j = 0
        for q in range(sel.shape[0]):
            g = sel[q]
            while j <= g:
                run0 += c0[a + j]
                run1 += c1[a + j]
                j += 1
            lo = vals[a + g]
            hi = vals[a + g + 1]
            mid = lo + (hi - lo) / 2.0
            # keep "value <= threshold" equivalent to "value <= lo" for adjacent floats
            if mid >= hi:
                mid = lo
            slot[t] = s
            thr[t] = mid
            l0[t] = run0
            l1[t] = run1
            t += 1
    return slot, thr, l0, l1


@njit(cache=True)
def gains(n0, n1, l0, l1, min_leaf):
    n = n0 + n1
    out = np.zeros(l0.shape[0], np.float64)
    gp = 1.0 - (n0 * n0 + n1 * n1) / (n * n)
    for t in range(l0.shape[0]):
        nl = l0[t] + l1[t]
        nr = n - nl
        if nl < min_leaf or nr < min_leaf or nl == 0 or nr == 0:
            continue
        r0 = n0 - l0[t]
        r1 = n1 - l1[t]
        gl = 1.0 - (l0[t] * l0[t] + l1[t] * l1[t]) / (nl * nl)
        gr = 1.0 - (r0 * r0 + r1 * r1) / (nr * nr)
        out[t] = gp - (nl / n) * gl - (nr / n) * gr
    return out


@njit(cache=True)
def best_split(n0, n1, vals, c0, c1, prio, off, k, min_leaf, min_gain):
    """Return (slot, threshold); slot is -1 when no candidate beats ``min_gain``.

    Candidates are scanned in (slot, threshold) order with a strict comparison,
    so ties go to the lowest feature slot and then the lowest threshold.
    """
    slot, thr, l0, l1 = candidates(vals, c0, c1, prio, off, k)
    g = gains(n0, n1, l0, l1, min_leaf)
    best = -1
    best_gain = min_gain
    for t in range(g.shape[0]):
        if g[t] > best_gain:
            best_gain = g[t]
            best = t
    if best < 0:
        return -1, 0.0
    return slot[best], thr[best]


@njit(cache=True)
def remove_row(vals, c0, c1, prio, off, cols, pos, label):
    """Decrement the bin holding row ``pos`` in every slot; drop bins that become empty.

    Mutates the count arrays in place; returns possibly compacted arrays.
    """
    n_slots = off.shape[0] - 1
    emptied = 0
    hit = np.empty(n_slots, np.int64)
    for s in range(n_slots):
        x = cols[s, pos]
        lo = off[s]
        hi = off[s + 1]
        while lo < hi:
            mid = (lo + hi) // 2
            if vals[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        hit[s] = lo
        if label:
            c1[lo] -= 1
        else:
            c0[lo] -= 1
        if c0[lo] + c1[lo] == 0:
            emptied += 1
    if emptied == 0:
        return vals, c0, c1, prio, off
    m = vals.shape[0] - emptied
    nv = np.empty(m, np.float64)
    n0 = np.empty(m, np.int64)
    n1 = np.empty(m, np.int64)
    npr = np.empty(m, np.uint64)
    noff = np.zeros(n_slots + 1, np.int64)
    j = 0
    for s in range(n_slots):
        for i in range(off[s], off[s + 1]):
            if c0[i] + c1[i] == 0:
                continue
            nv[j] = vals[i]
            n0[j] = c0[i]
            n1[j] = c1[i]
            npr[j] = prio[i]
            j += 1
        noff[s + 1] = j
    return nv, n0, n1, npr, noff


@njit(cache=True)
def tree_proba(feature, threshold, left, right, proba, X):
    """Leaf probabilities for each row of ``X`` from a flattened tree."""
    out = np.empty(X.shape[0], np.float64)
    for r in range(X.shape[0]):
        i = 0
        while feature[i] >= 0:
            if X[r, feature[i]] <= threshold[i]:
                i = left[i]
            else:
                i = right[i]
        out[r] = proba[i]
    return out


def warmup():
    """Trigger compilation of every kernel on a tiny input."""
    cols = np.array([[0.0, 1.0, 2.0]])
    y = np.array([0, 1, 1], np.uint8)
    rows = np.arange(3, dtype=np.int64)
    feats = np.zeros(1, np.int64)
    h = build_hist(cols, y, rows, feats, np.uint64(1))
    best_split(1, 2, *h, 8, 1, 1e-12)
    remove_row(*h, cols, 0, 0)
    tree_proba(np.array([-1]), np.zeros(1), np.zeros(1, np.int64), np.zeros(1, np.int64), np.ones(1), cols.T.copy())
