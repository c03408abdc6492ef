"""Hot loops of Hamming-ranking evaluation.

Each kernel exists twice: a numba ``@njit`` loop and a vectorised numpy
version. The public names dispatch to one of them depending on
``schgan._accel.USE_NUMBA``; both are importable directly so they can be
compared and benchmarked in the same process.

Codes are packed ``uint8`` rows (little bit order, see :mod:`schgan.model`).
"""
import numpy as np

from ._accel import USE_NUMBA, njit, prange

POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

# Recall levels are i / PR_STEPS for i = 0..PR_STEPS.
PR_STEPS = 20


# --------------------------------------------------------------------- numpy

def hamming_matrix_numpy(a, b):
    x = np.bitwise_xor(a[:, None, :], b[None, :, :])
    return POPCOUNT8[x].sum(axis=-1, dtype=np.int32)


def rank_numpy(dist):
    # stable sort -> ties resolved by ascending column index
    return np.argsort(dist, axis=1, kind="stable")


def average_precision_numpy(rel):
    rel = rel.astype(np.float64)
    hits = np.cumsum(rel, axis=1)
    ranks = np.arange(1, rel.shape[1] + 1, dtype=np.float64)
    total = hits[:, -1] if rel.shape[1] else np.zeros(rel.shape[0])
    s = (hits / ranks * rel).sum(axis=1)
    out = np.zeros(rel.shape[0])
    nz = total > 0
    out[nz] = s[nz] / total[nz]
    return out


def pr_curve_numpy(rel, steps=PR_STEPS):
    """Interpolated precision per query at recall i/steps, and a validity mask."""
    rel = rel.astype(np.int64)
    nq, n = rel.shape
    hits = np.cumsum(rel, axis=1)
    total = hits[:, -1] if n else np.zeros(nq, dtype=np.int64)
    prec = hits / np.arange(1, n + 1, dtype=np.float64)
    # suffix max: best precision at any rank at or after k
    suffix = np.maximum.accumulate(prec[:, ::-1], axis=1)[:, ::-1]
    out = np.zeros((nq, steps + 1))
    levels = np.arange(steps + 1)
    for q in range(nq):
        if total[q] == 0:
            continue
        # first rank where steps*hits >= i*R
        first = np.searchsorted(steps * hits[q], levels * total[q], side="left")
        out[q] = suffix[q, first]
    return out, total > 0


def topk_hits_numpy(rel, ks):
    hits = np.cumsum(rel.astype(np.int64), axis=1)
    return hits[:, np.asarray(ks) - 1]


# --------------------------------------------------------------------- numba

@njit(cache=True, parallel=True)
def hamming_matrix_numba(a, b):
    # rows are independent, so the result does not depend on the thread count
    n, w = a.shape
    m = b.shape[0]
    out = np.empty((n, m), dtype=np.int32)
    for i in prange(n):
        for j in range(m):
            s = 0
            for k in range(w):
                s += POPCOUNT8[a[i, k] ^ b[j, k]]
            out[i, j] = s
    return out


@njit(cache=True, parallel=True)
def rank_numba(dist):
    # counting sort per row: distances are small non-negative integers
    nq, n = dist.shape
    out = np.empty((nq, n), dtype=np.int64)
    if n == 0:
        return out
    top = 0
    for i in range(nq):
        for j in range(n):
            if dist[i, j] > top:
                top = dist[i, j]
    for i in prange(nq):
        counts = np.zeros(top + 2, dtype=np.int64)
        for j in range(n):
            counts[dist[i, j] + 1] += 1
        for d in range(1, top + 2):
            counts[d] += counts[d - 1]
        for j in range(n):
            d = dist[i, j]
            out[i, counts[d]] = j
            counts[d] += 1
    return out


@njit(cache=True)
def average_precision_numba(rel):
    nq, n = rel.shape
    out = np.zeros(nq)
    for q in range(nq):
        hits = 0
        s = 0.0
        for k in range(n):
            if rel[q, k]:
                hits += 1
                s += hits / (k + 1.0)
        if hits > 0:
            out[q] = s / hits
    return out


@njit(cache=True)
def _pr_curve_numba(rel, steps):
    nq, n = rel.shape
    out = np.zeros((nq, steps + 1))
    valid = np.zeros(nq, dtype=np.bool_)
    hits = np.empty(n, dtype=np.int64)
    suffix = np.empty(n)
    for q in range(nq):
        h = 0
        for k in range(n):
            if rel[q, k]:
                h += 1
            hits[k] = h
        if h == 0:
            continue
        valid[q] = True
        best = 0.0
        for k in range(n - 1, -1, -1):
            p = hits[k] / (k + 1.0)
            if p > best:
                best = p
            suffix[k] = best
        k = 0
        for i in range(steps + 1):
            while steps * hits[k] < i * h:
                k += 1
            out[q, i] = suffix[k]
    return out, valid


def pr_curve_numba(rel, steps=PR_STEPS):
    return _pr_curve_numba(np.ascontiguousarray(rel, dtype=np.uint8), steps)


@njit(cache=True)
def _topk_hits_numba(rel, ks):
    nq, n = rel.shape
    out = np.zeros((nq, ks.shape[0]), dtype=np.int64)
    for q in range(nq):
        h = 0
        j = 0
        for k in range(n):
            if rel[q, k]:
                h += 1
            while j < ks.shape[0] and ks[j] == k + 1:
                out[q, j] = h
                j += 1
    return out


def topk_hits_numba(rel, ks):
    ks = np.asarray(ks, dtype=np.int64)
    order = np.argsort(ks, kind="stable")
    res = _topk_hits_numba(np.ascontiguousarray(rel, dtype=np.uint8), ks[order])
    out = np.empty_like(res)
    out[:, order] = res
    return out


# ------------------------------------------------------------------ dispatch

if USE_NUMBA:
    def hamming_matrix(a, b):
        return hamming_matrix_numba(np.ascontiguousarray(a, dtype=np.uint8),
                                    np.ascontiguousarray(b, dtype=np.uint8))

    def rank(dist):
        return rank_numba(np.ascontiguousarray(dist, dtype=np.int64))

    def average_precision_rows(rel):
        return average_precision_numba(np.ascontiguousarray(rel, dtype=np.uint8))

    pr_curve_rows = pr_curve_numba
    topk_hits = topk_hits_numba
else:
    def hamming_matrix(a, b):
        return hamming_matrix_numpy(np.asarray(a, dtype=np.uint8),
                                    np.asarray(b, dtype=np.uint8))

    rank = rank_numpy
    average_precision_rows = average_precision_numpy
    pr_curve_rows = pr_curve_numpy
    topk_hits = topk_hits_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
