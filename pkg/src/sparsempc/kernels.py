"""Hot loops: batch peeling, degeneracy ordering, bounded-radius ball scans.

Each kernel has two interchangeable implementations:

* a numba ``@njit`` version (default when numba imports cleanly), and
* a pure-numpy version, selected by setting ``SPARSEMPC_NO_NUMBA=1`` in the
  environment (or by flipping :data:`USE_NUMBA` at runtime, which the tests
  and the benchmark harness do).

Both lanes are exercised against each other in the test suite and timed by
``sparsempc bench``.  All kernels take raw CSR arrays (``indptr``/``indices``)
so callers can hand them compacted subgraphs.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


USE_NUMBA = HAS_NUMBA and os.environ.get("SPARSEMPC_NO_NUMBA", "") not in ("1", "true", "yes")


def gather_segments(indptr: np.ndarray, indices: np.ndarray, nodes: np.ndarray):
    """Concatenate the CSR adjacency rows of ``nodes``.

    Returns ``(sources, neighbors)`` where ``sources[j]`` is the node whose row
    produced ``neighbors[j]``.  Pure numpy; cheap enough to not need a jit lane.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    starts = indptr[nodes]
    lengths = indptr[nodes + 1] - starts
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    sources = np.repeat(nodes, lengths)
    # index into `indices`: starts repeated, plus a within-row ramp
    offsets = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return sources, indices[np.repeat(starts, lengths) + offsets]


def alive_degrees(indptr: np.ndarray, indices: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Per-node count of alive neighbors (zero for dead nodes)."""
    hit = alive[indices].astype(np.int64)
    cs = np.concatenate((np.zeros(1, np.int64), np.cumsum(hit)))
    deg = cs[indptr[1:]] - cs[indptr[:-1]]
    deg[~alive] = 0
    return deg


# ---------------------------------------------------------------------------
# batch peeling
# ---------------------------------------------------------------------------


@njit(cache=True)
def _peel_njit(indptr, indices, alive, d, max_layers):  # pragma: no cover - jit
    n = alive.size
    layer = np.zeros(n, np.int64)
    deg = np.zeros(n, np.int64)
    for v in range(n):
        if alive[v]:
            c = 0
            for e in range(indptr[v], indptr[v + 1]):
                if alive[indices[e]]:
                    c += 1
            deg[v] = c
    cur = np.empty(n, np.int64)
    nxt = np.empty(n, np.int64)
    cur_len = 0
    for v in range(n):
        if alive[v] and deg[v] <= d:
            cur[cur_len] = v
            cur_len += 1
    t = 0
    while cur_len > 0 and t < max_layers:
        t += 1
        for i in range(cur_len):
            layer[cur[i]] = t
        nxt_len = 0
        for i in range(cur_len):
            v = cur[i]
            for e in range(indptr[v], indptr[v + 1]):
                u = indices[e]
                if alive[u] and layer[u] == 0:
                    deg[u] -= 1
                    if deg[u] == d:
                        nxt[nxt_len] = u
                        nxt_len += 1
        cur, nxt = nxt, cur
        cur_len = nxt_len
    return layer, t


def _peel_numpy(indptr, indices, alive, d, max_layers):
    n = alive.size
    layer = np.zeros(n, np.int64)
    deg = alive_degrees(indptr, indices, alive)
    unassigned = alive.copy()
    frontier = unassigned & (deg <= d)
    t = 0
    while t < max_layers and frontier.any():
        t += 1
        layer[frontier] = t
        unassigned &= ~frontier
        _, nb = gather_segments(indptr, indices, np.flatnonzero(frontier))
        np.add.at(deg, nb, -1)
        frontier = unassigned & (deg <= d)
    return layer, t


def peel_layers(indptr, indices, alive, d: int, max_layers: int):
    """Batch-peel the alive-induced subgraph with threshold ``d``.

    Layer ``t`` (1-based) holds the nodes whose remaining degree is <= d once
    layers below ``t`` are gone; all such nodes drop simultaneously.  Stops
    after ``max_layers`` layers.  Returns ``(layer, t)`` where ``layer`` is 0
    for dead or still-unassigned nodes and ``t`` is the number of layers
    produced.  The caller detects a stall as: some alive node unassigned while
    ``t < max_layers``.
    """
    alive = np.asarray(alive, dtype=np.bool_)
    if USE_NUMBA:
        return _peel_njit(indptr, indices, alive, np.int64(d), np.int64(max_layers))
    return _peel_numpy(indptr, indices, alive, int(d), int(max_layers))


# ---------------------------------------------------------------------------
# degeneracy ordering (min-degree removal with bucket queues)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _degeneracy_njit(indptr, indices):  # pragma: no cover - jit
    n = indptr.size - 1
    deg = np.empty(n, np.int64)
    maxdeg = 0
    for v in range(n):
        deg[v] = indptr[v + 1] - indptr[v]
        if deg[v] > maxdeg:
            maxdeg = deg[v]
    bin_start = np.zeros(maxdeg + 2, np.int64)
    for v in range(n):
        bin_start[deg[v] + 1] += 1
    for i in range(1, maxdeg + 2):
        bin_start[i] += bin_start[i - 1]
    vert = np.empty(n, np.int64)
    pos = np.empty(n, np.int64)
    fill = bin_start[:-1].copy()
    for v in range(n):
        p = fill[deg[v]]
        vert[p] = v
        pos[v] = p
        fill[deg[v]] += 1
    cur = deg.copy()
    k = 0
    for i in range(n):
        v = vert[i]
        if cur[v] > k:
            k = cur[v]
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if cur[u] > cur[v]:
                du = cur[u]
                pu = pos[u]
                pw = bin_start[du]
                w = vert[pw]
                if u != w:
                    vert[pu] = w
                    vert[pw] = u
                    pos[u] = pw
                    pos[w] = pu
                bin_start[du] += 1
                cur[u] -= 1
    return k, vert, cur


def _degeneracy_numpy(indptr, indices):
    # Same bucket-queue walk as the jit lane, driven from interpreted code.
    n = indptr.size - 1
    deg = (indptr[1:] - indptr[:-1]).astype(np.int64)
    maxdeg = int(deg.max()) if n else 0
    bin_start = np.zeros(maxdeg + 2, np.int64)
    np.add.at(bin_start, deg + 1, 1)
    bin_start = np.cumsum(bin_start)
    vert = np.argsort(deg, kind="stable").astype(np.int64)
    pos = np.empty(n, np.int64)
    pos[vert] = np.arange(n, dtype=np.int64)
    cur = deg.copy()
    bs = bin_start.copy()
    k = 0
    for i in range(n):
        v = vert[i]
        cv = cur[v]
        if cv > k:
            k = int(cv)
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if cur[u] > cv:
                du = cur[u]
                pu = pos[u]
                pw = bs[du]
                w = vert[pw]
                if u != w:
                    vert[pu] = w
                    vert[pw] = u
                    pos[u] = pw
                    pos[w] = pu
                bs[du] += 1
                cur[u] -= 1
    return k, vert, cur


def degeneracy_order(indptr, indices):
    """Minimum-degree elimination in O(n + m).

    Returns ``(k, order, core)``: ``k`` is the degeneracy (max degree seen at
    removal time), ``order`` the removal order (every node has at most ``k``
    neighbors later in it), and ``core`` the per-node degree at removal.
    """
    n = indptr.size - 1
    if n == 0:
        return 0, np.empty(0, np.int64), np.empty(0, np.int64)
    if USE_NUMBA:
        k, order, core = _degeneracy_njit(indptr, indices)
        return int(k), order, core
    return _degeneracy_numpy(indptr, indices)


# ---------------------------------------------------------------------------
# bounded-radius ball statistics (for neighborhood-gather cost metering)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _balls_njit(indptr, indices, member, sources, radius, weights):  # pragma: no cover - jit
    stamp = np.full(member.size, -1, np.int64)
    queue = np.empty(member.size, np.int64)
    counts = np.empty(sources.size, np.int64)
    wsums = np.empty(sources.size, np.int64)
    for si in range(sources.size):
        s = sources[si]
        stamp[s] = si
        queue[0] = s
        head = 0
        tail = 1
        level_end = 1
        depth = 0
        cnt = 1
        ws = weights[s]
        while head < tail and depth < radius:
            while head < level_end:
                v = queue[head]
                head += 1
                for e in range(indptr[v], indptr[v + 1]):
                    u = indices[e]
                    if member[u] and stamp[u] != si:
                        stamp[u] = si
                        queue[tail] = u
                        tail += 1
                        cnt += 1
                        ws += weights[u]
            depth += 1
            level_end = tail
        counts[si] = cnt
        wsums[si] = ws
    return counts, wsums


def _balls_numpy(indptr, indices, member, sources, radius, weights):
    counts = np.empty(sources.size, np.int64)
    wsums = np.empty(sources.size, np.int64)
    for si, s in enumerate(sources):
        seen = np.zeros(member.size, np.bool_)
        seen[s] = True
        frontier = np.array([s], dtype=np.int64)
        for _ in range(radius):
            if frontier.size == 0:
                break
            _, nb = gather_segments(indptr, indices, frontier)
            nb = nb[member[nb] & ~seen[nb]]
            if nb.size == 0:
                break
            nb = np.unique(nb)
            seen[nb] = True
            frontier = nb
        counts[si] = int(seen.sum())
        wsums[si] = int(weights[seen].sum())
    return counts, wsums


def ball_stats(indptr, indices, member, sources, radius: int, weights):
    """Per-source size and weight of the radius-``radius`` ball.

    BFS stays inside ``member`` nodes (sources must be members).  Returns
    ``(counts, weight_sums)``: the number of reached nodes including the
    source, and the sum of ``weights`` over them.
    """
    member = np.asarray(member, dtype=np.bool_)
    sources = np.asarray(sources, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.int64)
    if sources.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    if USE_NUMBA:
        return _balls_njit(indptr, indices, member, sources, np.int64(radius), weights)
    return _balls_numpy(indptr, indices, member, sources, int(radius), weights)


@njit(cache=True)
def _pack_njit(weights, cap):  # pragma: no cover - jit twin of _pack_python
    out = np.empty(weights.size, np.int64)
    fill = np.int64(0)
    b = np.int64(0)
    for i in range(weights.size):
        w = weights[i]
        if fill > 0 and fill + w > cap:
            b += 1
            fill = 0
        out[i] = b
        fill += w
    return out


def _pack_python(weights, cap):
    out = np.empty(weights.size, np.int64)
    fill = 0
    b = 0
    for i, w in enumerate(weights.tolist()):
        if fill > 0 and fill + w > cap:
            b += 1
            fill = 0
        out[i] = b
        fill += w
    return out


def pack_bins(weights: np.ndarray, cap: int) -> np.ndarray:
    """Sequential bin packing: walk items in the given order, open a new bin
    whenever the current one would overflow ``cap``.  Returns a bin id per
    item.  An item alone may exceed ``cap`` (callers choose cap >= max weight
    when that matters); every bin except possibly the last is more than half
    full when all items weigh <= cap/2."""
    weights = np.ascontiguousarray(weights, dtype=np.int64)
    if weights.size == 0:
        return np.empty(0, np.int64)
    if USE_NUMBA:
        return _pack_njit(weights, np.int64(cap))
    return _pack_python(weights, int(cap))
