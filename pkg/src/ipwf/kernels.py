"""Numeric inner loops: 1-D k-means and candidate scoring.

Each kernel has a numba implementation and a pure-numpy fallback with the
same results bit for bit.  The numba path is used when numba imports and
``IPWF_DISABLE_NUMBA`` is unset (or ``0``); set it to ``1`` to force the
fallback.

Scores are exactly rounded sums (the same value ``math.fsum`` returns), so
summation order never changes a ranking.
"""
from __future__ import annotations

import math
import os

import numpy as np

__all__ = [
    "BACKEND",
    "exact_sum",
    "kmeans_1d",
    "score_candidates",
    "kmeans_1d_numpy",
    "kmeans_1d_optimal_numpy",
    "score_candidates_numpy",
]

# costs closer than this (relative to the total sum of squares) count as
# equal, so rounding noise never decides between two optimal splits
_TIE_RTOL = 1e-13

_FLAG = os.environ.get("IPWF_DISABLE_NUMBA", "").strip().lower()
_WANT_NUMBA = _FLAG in ("", "0", "false", "no")

try:
    if not _WANT_NUMBA:
        raise ImportError("numba disabled by IPWF_DISABLE_NUMBA")
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# pure-numpy path

def kmeans_1d_numpy(times: np.ndarray, k: int = 3, max_iter: int = 100) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    n = t.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    s = np.sort(t)
    cent = np.empty(k, dtype=np.float64)
    for j in range(k):
        pos = (2 * j + 1) / (2 * k) * (n - 1)
        lo = int(math.floor(pos))
        hi = min(lo + 1, n - 1)
        cent[j] = s[lo] + (s[hi] - s[lo]) * (pos - lo)
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        new = np.argmin(np.abs(t[:, None] - cent[None, :]), axis=1).astype(np.int64)
        if np.array_equal(new, labels):
            break
        labels = new
        sums = np.bincount(labels, weights=t, minlength=k)
        counts = np.bincount(labels, minlength=k)
        nz = counts > 0
        cent[nz] = sums[nz] / counts[nz]
    order = np.argsort(cent, kind="mergesort")
    rank = np.empty(k, dtype=np.int64)
    rank[order] = np.arange(k)
    return rank[labels]


def kmeans_1d_optimal_numpy(times: np.ndarray, k: int = 3) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    n = t.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(t, kind="mergesort")
    s = t[order] - t[order[0]]
    S = np.concatenate(([0.0], np.cumsum(s)))
    Q = np.concatenate(([0.0], np.cumsum(s * s)))
    allowed = np.ones(n + 1, dtype=bool)
    allowed[1:n] = s[:-1] < s[1:]
    tol = _TIE_RTOL * (1.0 + Q[n])
    D = np.full((k + 1, n + 1), np.inf)
    D[0, 0] = 0.0
    arg = np.zeros((k + 1, n + 1), dtype=np.int64)
    idx = np.arange(n + 1)
    for m in range(1, k + 1):
        for j in range(n + 1):
            if not allowed[j]:
                continue
            i = idx[:j + 1]
            ln = (j - i).astype(np.float64)
            d = S[j] - S[i]
            cost = np.zeros(j + 1)
            nz = ln > 0
            cost[nz] = (Q[j] - Q[i][nz]) - d[nz] * d[nz] / ln[nz]
            tot = D[m - 1, :j + 1] + cost
            tot[~allowed[:j + 1]] = np.inf
            # ties (up to rounding) go to the latest split so empty clusters trail
            bi = int(np.flatnonzero(tot <= tot.min() + tol)[-1])
            D[m, j] = tot[bi]
            arg[m, j] = bi
    lab_sorted = np.empty(n, dtype=np.int64)
    j = n
    for m in range(k, 0, -1):
        i = arg[m, j]
        lab_sorted[i:j] = m - 1
        j = i
    labels = np.empty(n, dtype=np.int64)
    labels[order] = lab_sorted
    return labels


def score_candidates_numpy(cands, query, indptr, indices, bits, stride):
    out = np.zeros(len(cands), dtype=np.float64)
    for i, c in enumerate(cands):
        seg = indices[indptr[c]:indptr[c + 1]]
        hit = seg[np.isin(seg, query, assume_unique=True)]
        out[i] = math.fsum(bits[hit // stride].tolist())
    return out


# ---------------------------------------------------------------------------
# numba path (plain python until decorated)

def _exact_sum_py(values):
    # Shewchuk partials with the final half-way correction, as in math.fsum.
    # Inputs are finite.
    p = np.empty(values.shape[0] + 1, dtype=np.float64)
    n = 0
    for v in values:
        x = v
        i = 0
        for j in range(n):
            y = p[j]
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo != 0.0:
                p[i] = lo
                i += 1
            x = hi
        n = i
        if x != 0.0:
            p[n] = x
            n += 1
    hi = 0.0
    lo = 0.0
    if n > 0:
        n -= 1
        hi = p[n]
        while n > 0:
            x = hi
            n -= 1
            y = p[n]
            hi = x + y
            yr = hi - x
            lo = y - yr
            if lo != 0.0:
                break
        if n > 0 and ((lo < 0.0 and p[n - 1] < 0.0) or (lo > 0.0 and p[n - 1] > 0.0)):
            y = lo * 2.0
            x = hi + y
            yr = x - hi
            if y == yr:
                hi = x
    return hi


def _kmeans_1d_py(t, k, max_iter):
    n = t.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    s = np.sort(t)
    cent = np.empty(k, dtype=np.float64)
    for j in range(k):
        pos = (2 * j + 1) / (2 * k) * (n - 1)
        lo = int(math.floor(pos))
        hi = min(lo + 1, n - 1)
        cent[j] = s[lo] + (s[hi] - s[lo]) * (pos - lo)
    sums = np.zeros(k, dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for _ in range(max_iter):
        changed = False
        for i in range(n):
            best = 0
            bd = abs(t[i] - cent[0])
            for j in range(1, k):
                d = abs(t[i] - cent[j])
                if d < bd:
                    best = j
                    bd = d
            if labels[i] != best:
                labels[i] = best
                changed = True
        if not changed:
            break
        sums[:] = 0.0
        counts[:] = 0
        for i in range(n):
            sums[labels[i]] += t[i]
            counts[labels[i]] += 1
        for j in range(k):
            if counts[j] > 0:
                cent[j] = sums[j] / counts[j]
    order = np.argsort(cent, kind="mergesort")
    rank = np.empty(k, dtype=np.int64)
    for j in range(k):
        rank[order[j]] = j
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = rank[labels[i]]
    return out


def _kmeans_1d_optimal_py(t, k):
    n = t.shape[0]
    labels = np.empty(n, dtype=np.int64)
    if n == 0:
        return labels
    order = np.argsort(t, kind="mergesort")
    s = np.empty(n, dtype=np.float64)
    for i in range(n):
        s[i] = t[order[i]] - t[order[0]]
    S = np.zeros(n + 1, dtype=np.float64)
    Q = np.zeros(n + 1, dtype=np.float64)
    allowed = np.ones(n + 1, dtype=np.bool_)
    for i in range(n):
        S[i + 1] = S[i] + s[i]
        Q[i + 1] = Q[i] + s[i] * s[i]
        if 0 < i and not s[i - 1] < s[i]:
            allowed[i] = False
    tol = _TIE_RTOL * (1.0 + Q[n])
    D = np.full((k + 1, n + 1), np.inf)
    D[0, 0] = 0.0
    arg = np.zeros((k + 1, n + 1), dtype=np.int64)
    tot = np.empty(n + 1, dtype=np.float64)
    for m in range(1, k + 1):
        for j in range(n + 1):
            if not allowed[j]:
                continue
            best = np.inf
            for i in range(j + 1):
                tot[i] = np.inf
                if not allowed[i]:
                    continue
                c = 0.0
                if j > i:
                    d = S[j] - S[i]
                    c = (Q[j] - Q[i]) - d * d / (j - i)
                tot[i] = D[m - 1, i] + c
                if tot[i] < best:
                    best = tot[i]
            bi = 0
            for i in range(j, -1, -1):
                if tot[i] <= best + tol:
                    bi = i
                    break
            D[m, j] = tot[bi]
            arg[m, j] = bi
    j = n
    for m in range(k, 0, -1):
        i = arg[m, j]
        for p in range(i, j):
            labels[order[p]] = m - 1
        j = i
    return labels


def _score_candidates_py(cands, query, indptr, indices, bits, stride):
    out = np.zeros(cands.shape[0], dtype=np.float64)
    buf = np.empty(query.shape[0], dtype=np.float64)
    nq = query.shape[0]
    for ci in range(cands.shape[0]):
        c = cands[ci]
        a = indptr[c]
        b = indptr[c + 1]
        q = 0
        m = 0
        while a < b and q < nq:
            x = indices[a]
            y = query[q]
            if x == y:
                buf[m] = bits[x // stride]
                m += 1
                a += 1
                q += 1
            elif x < y:
                a += 1
            else:
                q += 1
        out[ci] = _exact_sum(buf[:m])
    return out


if HAS_NUMBA:
    _exact_sum = njit(cache=True, nogil=True)(_exact_sum_py)
    _kmeans_1d_nb = njit(cache=True, nogil=True)(_kmeans_1d_py)
    _kmeans_1d_optimal_nb = njit(cache=True, nogil=True)(_kmeans_1d_optimal_py)
    _score_candidates_nb = njit(cache=True, nogil=True)(_score_candidates_py)
    BACKEND = "numba"
else:
    _exact_sum = _exact_sum_py
    BACKEND = "numpy"


def exact_sum(values) -> float:
    """Correctly rounded sum of finite floats."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if HAS_NUMBA:
        return float(_exact_sum(arr))
    return math.fsum(arr.tolist())


def kmeans_1d(times, k: int = 3, method: str = "optimal", max_iter: int = 100) -> np.ndarray:
    """Cluster 1-D values into ``k`` groups; labels are ordered by position.

    ``optimal`` returns a partition with minimum within-cluster sum of
    squares (dynamic programming over sorted split points).  Equal values
    never straddle a boundary and cost ties prefer later splits, so spare
    clusters stay empty at the end.

    ``lloyd`` runs Lloyd iterations from centroids at the (2j+1)/2k
    quantiles, assignment ties going to the lower cluster.
    """
    t = np.ascontiguousarray(times, dtype=np.float64)
    if method == "optimal":
        if HAS_NUMBA:
            return _kmeans_1d_optimal_nb(t, k)
        return kmeans_1d_optimal_numpy(t, k)
    if method == "lloyd":
        if HAS_NUMBA:
            return _kmeans_1d_nb(t, k, max_iter)
        return kmeans_1d_numpy(t, k, max_iter)
    raise ValueError(f"unknown k-means method {method!r}")


def score_candidates(cands, query, indptr, indices, bits, stride: int = 1) -> np.ndarray:
    """Sum ``bits[key // stride]`` over keys shared by each candidate row and ``query``.

    ``indices[indptr[c]:indptr[c+1]]`` and ``query`` must be sorted and unique.
    """
    cands = np.ascontiguousarray(cands, dtype=np.int64)
    query = np.ascontiguousarray(query, dtype=np.int64)
    if HAS_NUMBA:
        return _score_candidates_nb(cands, query, indptr, indices, bits, np.int64(stride))
    return score_candidates_numpy(cands, query, indptr, indices, bits, stride)
