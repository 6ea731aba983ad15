"""Jit-compiled Euclidean distance kernels.

Every distance evaluated anywhere in this package flows through the
same inner loop: float32 inputs, float64 accumulation, fixed
left-to-right summation. That keeps oracle values, the graph builder
and the reachability verifier bit-identical, so boundary comparisons
(prune rule vs. verification rule) can never disagree by an ulp.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _sqdist(x, a, y, b):
    s = 0.0
    for k in range(x.shape[1]):
        diff = np.float64(x[a, k]) - np.float64(y[b, k])
        s += diff * diff
    return s


@njit(cache=True)
def pair_distance(x, a, y, b):
    """Distance between row a of x and row b of y."""
    return np.sqrt(_sqdist(x, a, y, b))


@njit(cache=True)
def row_distances(x, a, y):
    """Distances from row a of x to every row of y."""
    n = y.shape[0]
    out = np.empty(n, dtype=np.float64)
    for j in range(n):
        out[j] = np.sqrt(_sqdist(x, a, y, j))
    return out


@njit(cache=True)
def gather_distances(x, a, y, ids):
    """Distances from row a of x to the rows of y selected by ids."""
    out = np.empty(ids.shape[0], dtype=np.float64)
    for t in range(ids.shape[0]):
        out[t] = np.sqrt(_sqdist(x, a, y, ids[t]))
    return out


@njit(cache=True)
def _stabilize_ties(order, vals):
    # np.argsort in nopython mode is not stable; re-sort equal-value
    # runs by index so ties always break toward the smaller id.
    n = order.shape[0]
    i = 0
    while i < n:
        j = i + 1
        while j < n and vals[order[j]] == vals[order[i]]:
            j += 1
        if j - i > 1:
            for a in range(i + 1, j):
                key = order[a]
                b = a - 1
                while b >= i and order[b] > key:
                    order[b + 1] = order[b]
                    b -= 1
                order[b + 1] = key
        i = j


@njit(cache=True, parallel=True)
def build_pruned_adjacency(X, alpha, cap, scale):
    """Per-node pruned neighbor lists.

    For each node p, candidates are scanned in ascending (distance, id)
    order; a candidate q is kept unless an already-kept neighbor p'
    satisfies alpha * d(p', q) <= d(p, q). cap > 0 stops the scan once
    that many neighbors are kept; cap == 0 scans to the end.

    Returns (adjacency, degrees, row_sums, dup_partner) where
    dup_partner[p] is the id of an exact duplicate of p, or -1.
    """
    n = X.shape[0]
    maxdeg = cap if cap > 0 else n - 1
    adj = np.full((n, maxdeg), -1, dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    rowsum = np.zeros(n, dtype=np.float64)
    dup = np.full(n, -1, dtype=np.int64)
    for p in prange(n):
        drow = np.empty(n, dtype=np.float64)
        total = 0.0
        for j in range(n):
            drow[j] = np.sqrt(_sqdist(X, p, X, j)) * scale
            total += drow[j]
        rowsum[p] = total
        order = np.argsort(drow)
        _stabilize_ties(order, drow)
        kept = 0
        for t in range(n):
            q = order[t]
            if q == p:
                continue
            dq = drow[q]
            if dq == 0.0:
                dup[p] = q
                continue
            keep = True
            for s in range(kept):
                dpq = np.sqrt(_sqdist(X, adj[p, s], X, q)) * scale
                if alpha * dpq <= dq:
                    keep = False
                    break
            if keep:
                adj[p, kept] = q
                kept += 1
                if kept == maxdeg:
                    break
        deg[p] = kept
    return adj, deg, rowsum, dup
