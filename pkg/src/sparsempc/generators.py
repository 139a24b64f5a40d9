"""Bounded-arboricity instance generators.

The four standard families (tree, grid, preferential-attachment,
bounded-degree-random) make up the main corpus.  Two planted-gadget families
exercise the heavy-node removal mechanism at an exactly chosen in-degree, and
``layered-core`` builds towers with a prescribed number of peeling layers for
round-scaling measurements — ordinary sparse graphs peel in a handful of
layers, far too few to exercise the multi-phase machinery.

Every generator is deterministic given its seed and records its construction
parameters plus the exact degeneracy in the metadata sidecar.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph, build_graph
from .peeling import degeneracy

FAMILIES = (
    "tree",
    "grid",
    "preferential-attachment",
    "bounded-degree-random",
    "layered-core",
    "matching-gadget",
    "mis-gadget",
)


def _tree(params, rng):
    n = int(params["n"])
    if n < 1:
        raise ValueError("tree needs n >= 1")
    if n == 1:
        return build_graph(1, np.empty((0, 2), np.int64)), 1
    parents = (rng.random(n - 1) * np.arange(1, n)).astype(np.int64)
    edges = np.stack([parents, np.arange(1, n, dtype=np.int64)], axis=1)
    return build_graph(n, edges), 1


def _grid(params, rng):
    rows = int(params.get("rows") or np.sqrt(int(params["n"])))
    cols = int(params.get("cols", rows))
    if rows < 1 or cols < 1:
        raise ValueError("grid needs rows, cols >= 1")
    ids = np.arange(rows * cols).reshape(rows, cols)
    horiz = np.stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()], axis=1)
    vert = np.stack([ids[:-1, :].ravel(), ids[1:, :].ravel()], axis=1)
    return build_graph(rows * cols, np.concatenate([horiz, vert])), 2


def _preferential_attachment(params, rng):
    n = int(params["n"])
    c = int(params.get("c", 3))
    if c < 1:
        raise ValueError("attachment parameter c must be >= 1")
    if n <= c:
        raise ValueError("preferential-attachment needs n > c")
    edges = []
    # endpoint pool; sampling from it is sampling proportional to degree
    pool = list(range(c + 1))
    for u in range(1, c + 1):  # seed clique-ish core: connect first c+1 completely
        for v in range(u):
            edges.append((v, u))
            pool.extend((u, v))
    for u in range(c + 1, n):
        targets: set[int] = set()
        while len(targets) < c:
            targets.add(pool[int(rng.random() * len(pool))])
        for v in targets:
            edges.append((v, u))
            pool.extend((u, v))
    return build_graph(n, np.array(edges, dtype=np.int64)), c


def _bounded_degree_random(params, rng):
    n = int(params["n"])
    cap = int(params.get("deg", 8))
    if cap < 1 or n < 2:
        raise ValueError("bounded-degree-random needs n >= 2, deg >= 1")
    # pair up degree stubs: each node contributes `cap` stubs, so the degree
    # cap holds by construction; self-loops and duplicates are dropped
    stubs = np.repeat(np.arange(n, dtype=np.int64), cap)
    rng.shuffle(stubs)
    half = stubs.size // 2
    lo = np.minimum(stubs[:half], stubs[half:2 * half])
    hi = np.maximum(stubs[:half], stubs[half:2 * half])
    keep = lo != hi
    keys = np.unique(lo[keep] * np.int64(n) + hi[keep])
    edges = np.stack([keys // n, keys % n], axis=1)
    m_target = params.get("m")
    if m_target is not None:
        edges = edges[rng.permutation(edges.shape[0])[: int(m_target)]]
    return build_graph(n, edges), cap


def _layered_core(params, rng):
    """Tower of geometrically shrinking groups; peels exactly one group per layer.

    Group j feeds ``f = d - 1`` round-robin edges into group j+1.  While group
    j-1 is alive, a group-j node has degree f + (incoming) > d, so nothing
    above the current bottom group can peel; once group j-1 drops, group j's
    degree falls to f <= d and it becomes the next layer.  The top group gets a
    ring instead of forward edges so it peels last instead of stalling.
    """
    n = int(params["n"])
    depth = int(params["depth"])
    d = int(params.get("d", 3))
    f = d - 1
    min_top = max(5, f + 1)
    if depth < 2 or n < depth * min_top:
        raise ValueError("layered-core needs depth >= 2 and n >= depth * max(5, d)")
    # geometric sizes, largest first, smallest ~min_top, rescaled so the whole
    # profile sums to n (dumping the rounding slack into one group would blow
    # up that group's incoming round-robin degree)
    r = (min_top / (2.0 * n / depth)) ** (1.0 / (depth - 1))
    raw = (2.0 * n / depth) * r ** np.arange(depth)
    raw *= n / raw.sum()
    sizes = np.maximum(min_top, raw.astype(np.int64))
    slack = n - int(sizes.sum())
    if slack > 0:  # rounding slack, < depth; one node per largest group
        sizes[:slack] += 1
    if sizes[0] < sizes[1]:  # extreme parameter mixes; keep monotone
        raise ValueError("layered-core sizes infeasible; increase n or reduce depth")
    starts = np.concatenate([[0], np.cumsum(sizes)])[:-1]
    edges = []
    for j in range(depth - 1):
        src = np.arange(sizes[j], dtype=np.int64)
        for t in range(f):
            dst = (src * f + t) % sizes[j + 1]
            edges.append(np.stack([starts[j] + src, starts[j + 1] + dst], axis=1))
    top = np.arange(sizes[depth - 1], dtype=np.int64) + starts[depth - 1]
    ring = np.stack([top, np.roll(top, -1)], axis=1)[: max(0, sizes[depth - 1] - 0)]
    if sizes[depth - 1] == 2:
        ring = ring[:1]
    edges.append(ring)
    g = build_graph(n, np.concatenate(edges))
    return g, d


def _matching_gadget(params, rng):
    """Planted heavy receivers for the matching mechanism.

    Per planted parent: ``children`` leaf children, each wired to the parent
    plus ``decoys`` shared decoy parents, so a child marks the planted parent
    with probability 1/(decoys+1).  With d = decoys + 1 the children land in
    layer 1 and all parents in layer 2.  Node layout: parents, then decoys
    (``decoys`` per parent), then children grouped by parent.
    """
    parents = int(params.get("parents", 100))
    children = int(params.get("children", 256))
    decoys = int(params.get("decoys", 3))
    if parents < 1 or children < 1 or decoys < 0:
        raise ValueError("matching-gadget needs parents, children >= 1")
    n = parents + parents * decoys + parents * children
    edges = []
    child0 = parents + parents * decoys
    for pid in range(parents):
        dec = parents + pid * decoys + np.arange(decoys, dtype=np.int64)
        kids = child0 + pid * children + np.arange(children, dtype=np.int64)
        edges.append(np.stack([np.full(children, pid, np.int64), kids], axis=1))
        for dv in dec:
            edges.append(np.stack([np.full(children, dv, np.int64), kids], axis=1))
    return build_graph(n, np.concatenate(edges)), decoys + 2


def _mis_gadget(params, rng):
    """Planted heavy parents for the independent-set mechanism.

    Per planted parent: ``cliques`` cliques of ``clique_size`` children; each
    child connects to its clique mates (same layer) and the parent.  With
    d = clique_size the children form layer 1, parents layer 2, and each child
    has exactly clique_size - 1 same-layer neighbors.
    """
    parents = int(params.get("parents", 20))
    cliques = int(params.get("cliques", 125))
    csize = int(params.get("clique_size", 5))
    if parents < 1 or cliques < 1 or csize < 2:
        raise ValueError("mis-gadget needs parents, cliques >= 1, clique_size >= 2")
    per = cliques * csize
    n = parents + parents * per
    edges = []
    for pid in range(parents):
        base = parents + pid * per
        kids = base + np.arange(per, dtype=np.int64)
        edges.append(np.stack([np.full(per, pid, np.int64), kids], axis=1))
        for q in range(cliques):
            mem = base + q * csize + np.arange(csize, dtype=np.int64)
            iu = np.triu_indices(csize, k=1)
            edges.append(np.stack([mem[iu[0]], mem[iu[1]]], axis=1))
    return build_graph(n, np.concatenate(edges)), csize


_BUILDERS = {
    "tree": _tree,
    "grid": _grid,
    "preferential-attachment": _preferential_attachment,
    "bounded-degree-random": _bounded_degree_random,
    "layered-core": _layered_core,
    "matching-gadget": _matching_gadget,
    "mis-gadget": _mis_gadget,
}


def generate(family: str, params: dict, seed: int, return_meta: bool = False):
    """Build a corpus instance; deterministic given (family, params, seed).

    With ``return_meta=True`` also returns the sidecar dict, including the
    family's constructive arboricity bound and the exact degeneracy.
    """
    if family not in _BUILDERS:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    rng = np.random.default_rng(seed)
    g, bound = _BUILDERS[family](dict(params), rng)
    if not return_meta:
        return g
    meta = {
        "family": family,
        "params": {k: int(v) if isinstance(v, (int, np.integer)) else v for k, v in params.items()},
        "seed": int(seed),
        "degeneracy": degeneracy(g).degeneracy,
        "arboricity_bound": int(bound),
    }
    return g, meta
