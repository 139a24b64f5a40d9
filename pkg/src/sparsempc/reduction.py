"""Centralized reference pipeline: mark-and-propose, layered selection,
iterated degree reduction, greedy finish, and maximality checking.

Randomness discipline: every coin is drawn from the counter streams in
:mod:`sparsempc.rng keyed by node ids of the *phase subgraph* (alive nodes
renumbered in ascending id order).  The cluster simulation compacts phases
the same way, which is what makes its outputs bit-identical to this module's.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .graph import Graph, GraphView
from .kernels import gather_segments
from .peeling import HPartition, StallError, h_partition


class InvariantError(ValueError):
    """A ProposalSet or PartialSolution violates its declared invariants."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProposalSet:
    kind: str  # "matching" | "mis"
    # matching: (k, 2) arrays of (child, parent) edges, child -> parent oriented.
    # mis: (k,) node arrays.  Always sorted for cross-execution determinism.
    marked: np.ndarray
    proposed: np.ndarray
    seed: int
    p: float | None = None  # mis marking probability


@dataclass
class PartialSolution:
    kind: str
    selected: np.ndarray  # matching: (k, 2) canonical edges; mis: (k,) nodes
    removed: np.ndarray  # node ids taken out of the graph by this solution

    @classmethod
    def empty(cls, kind: str) -> "PartialSolution":
        sel = np.empty((0, 2), np.int64) if kind == "matching" else np.empty(0, np.int64)
        return cls(kind=kind, selected=sel, removed=np.empty(0, np.int64))

    def merge(self, other: "PartialSolution") -> "PartialSolution":
        if other.kind != self.kind:
            raise ValueError("cannot merge solutions of different kinds")
        sel = np.concatenate([self.selected, other.selected])
        if self.kind == "matching":
            sel = sel[np.lexsort((sel[:, 1], sel[:, 0]))]
        else:
            sel = np.sort(sel)
        return PartialSolution(
            kind=self.kind,
            selected=sel,
            removed=np.unique(np.concatenate([self.removed, other.removed])),
        )


@dataclass
class ReductionReport:
    phases: list[dict] = field(default_factory=list)

    def spec_rows(self) -> list[dict]:
        keys = ("delta_before", "d_used", "heavy_nodes_before", "heavy_survivors_after", "delta_after")
        return [{k: ph[k] for k in keys if k in ph} for ph in self.phases]


def solution_to_json(sol: PartialSolution, seed: int, report: ReductionReport | None = None) -> str:
    """Canonical JSON for diffing/digesting: fixed key order, sorted entries."""
    if sol.kind == "matching":
        selected = [[int(u), int(v)] for u, v in np.sort(sol.selected, axis=1)]
        selected.sort()
    else:
        selected = sorted(int(v) for v in sol.selected)
    doc = {
        "kind": sol.kind,
        "selected": selected,
        "seed": int(seed),
        "phases": report.phases if report is not None else [],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def solution_digest(sol: PartialSolution, seed: int) -> str:
    return hashlib.sha256(solution_to_json(sol, seed).encode()).hexdigest()


# ---------------------------------------------------------------------------
# mark-and-propose
# ---------------------------------------------------------------------------


def _edge_sources(g: Graph) -> np.ndarray:
    """CSR row id for every adjacency slot."""
    return np.repeat(np.arange(g.n, dtype=np.int64), g.degrees)


def mark_and_propose_matching(g: Graph, hp: HPartition, seed: int) -> ProposalSet:
    """Each node marks one uniformly-random outgoing (child -> parent) edge;
    each node then proposes one uniformly-random marked incoming edge.

    Unoriented (same-layer) edges are never candidates, so top-layer nodes and
    nodes with only same-layer neighbors mark nothing; nodes without marked
    incoming edges propose nothing.
    """
    lay = hp.layer
    src = _edge_sources(g)
    out_mask = lay[g.indices] > lay[src]
    # rank of each outgoing slot within its row, in neighbor-id order
    cs = np.concatenate([np.zeros(1, np.int64), np.cumsum(out_mask)])
    rank = cs[1:] - cs[g.indptr[src]]  # valid where out_mask
    outdeg = cs[g.indptr[1:]] - cs[g.indptr[:-1]]
    pick = rng.pick_index(seed, rng.MARK_EDGE, 0, np.arange(g.n), outdeg)
    hit = out_mask & (rank - 1 == pick[src])  # rank is 1-based at slot positions
    marked = np.stack([src[hit], g.indices[hit]], axis=1)  # sorted by child id

    # group marked edges by parent; pick one per parent in child-id order
    if marked.shape[0]:
        order = np.lexsort((marked[:, 0], marked[:, 1]))
        by_parent = marked[order]
        counts = np.bincount(by_parent[:, 1], minlength=g.n)
        starts = np.concatenate([np.zeros(1, np.int64), np.cumsum(counts)])
        pick_in = rng.pick_index(seed, rng.PROPOSE_EDGE, 0, np.arange(g.n), counts)
        parents = np.flatnonzero(counts > 0)
        proposed = by_parent[starts[parents] + pick_in[parents]]
        proposed = proposed[np.lexsort((proposed[:, 0], proposed[:, 1]))]
    else:
        proposed = np.empty((0, 2), np.int64)
    return ProposalSet(kind="matching", marked=marked, proposed=proposed, seed=int(seed))


def mark_and_propose_mis(g: Graph, hp: HPartition, p: float, seed: int) -> ProposalSet:
    """Mark each node with probability p; propose marked nodes whose same-layer
    neighbors are all unmarked."""
    if not (0 < p <= 1):
        raise ValueError(f"p must be in (0, 1], got {p}")
    lay = hp.layer
    marked = rng.uniform(seed, rng.MARK_NODE, 0, np.arange(g.n)) < p
    src = _edge_sources(g)
    blocking = marked[g.indices] & (lay[g.indices] == lay[src])
    cs = np.concatenate([np.zeros(1, np.int64), np.cumsum(blocking)])
    blocked = (cs[g.indptr[1:]] - cs[g.indptr[:-1]]) > 0
    proposed = marked & ~blocked
    return ProposalSet(
        kind="mis",
        marked=np.flatnonzero(marked),
        proposed=np.flatnonzero(proposed),
        seed=int(seed),
        p=float(p),
    )


# ---------------------------------------------------------------------------
# selection sweeps (deterministic, highest layer first)
# ---------------------------------------------------------------------------


def _check_matching_proposals(g: Graph, hp: HPartition, props: ProposalSet) -> None:
    if props.kind != "matching":
        raise InvariantError(f"expected matching proposals, got {props.kind}")
    mk, pr = props.marked, props.proposed
    if mk.shape[0] != np.unique(mk[:, 0]).size:
        raise InvariantError("a node marked more than one outgoing edge")
    if pr.shape[0] != np.unique(pr[:, 1]).size:
        raise InvariantError("a node proposed more than one incoming edge")
    if (hp.layer[mk[:, 0]] >= hp.layer[mk[:, 1]]).any():
        raise InvariantError("marked edge not oriented child -> parent")
    mk_keys = set((mk[:, 0] * g.n + mk[:, 1]).tolist())
    if not set((pr[:, 0] * g.n + pr[:, 1]).tolist()) <= mk_keys:
        raise InvariantError("proposed edge was never marked")


def select_matching(g: Graph, hp: HPartition, props: ProposalSet) -> PartialSolution:
    """Sweep layers ell..1; commit proposed edges whose receiving parent sits in
    the current layer and whose endpoints are both still alive.

    All commits of one layer are simultaneous: within a layer, receiving
    endpoints are distinct (one proposal per node) and senders are distinct
    (one mark per node) and sender != receiver (senders sit strictly lower).
    """
    _check_matching_proposals(g, hp, props)
    pr = props.proposed
    alive = np.ones(g.n, dtype=np.bool_)
    chosen = []
    if pr.shape[0]:
        recv_layer = hp.layer[pr[:, 1]]
        for lv in np.unique(recv_layer)[::-1]:
            cand = pr[recv_layer == lv]
            ok = alive[cand[:, 0]] & alive[cand[:, 1]]
            cand = cand[ok]
            alive[cand[:, 0]] = False
            alive[cand[:, 1]] = False
            chosen.append(cand)
    selected = np.concatenate(chosen) if chosen else np.empty((0, 2), np.int64)
    selected = selected[np.lexsort((selected[:, 1], selected[:, 0]))]
    return PartialSolution(kind="matching", selected=selected, removed=np.unique(selected))


def _check_mis_proposals(g: Graph, hp: HPartition, props: ProposalSet) -> None:
    if props.kind != "mis":
        raise InvariantError(f"expected mis proposals, got {props.kind}")
    if not np.isin(props.proposed, props.marked).all():
        raise InvariantError("proposed node was never marked")
    if props.proposed.size:
        is_marked = np.zeros(g.n, np.bool_)
        is_marked[props.marked] = True
        src, nb = gather_segments(g.indptr, g.indices, props.proposed)
        bad = is_marked[nb] & (hp.layer[nb] == hp.layer[src])
        if bad.any():
            raise InvariantError("proposed node has a marked same-layer neighbor")


def select_mis(g: Graph, hp: HPartition, props: ProposalSet) -> PartialSolution:
    """Sweep layers ell..1; commit alive proposed nodes of the current layer and
    remove them together with their neighbors."""
    _check_mis_proposals(g, hp, props)
    alive = np.ones(g.n, dtype=np.bool_)
    chosen = []
    if props.proposed.size:
        lay = hp.layer[props.proposed]
        for lv in np.unique(lay)[::-1]:
            cand = props.proposed[lay == lv]
            cand = cand[alive[cand]]
            chosen.append(cand)
            alive[cand] = False
            _, nb = gather_segments(g.indptr, g.indices, cand)
            alive[nb] = False
    selected = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, np.int64)
    removed = np.flatnonzero(~alive)
    return PartialSolution(kind="mis", selected=selected, removed=removed)


# ---------------------------------------------------------------------------
# one reduction phase, and the iterated loop
# ---------------------------------------------------------------------------


def _in_degrees(g: Graph, hp: HPartition, alive: np.ndarray | None = None) -> np.ndarray:
    """Per-node count of (alive) neighbors in strictly lower layers."""
    src = _edge_sources(g)
    mask = hp.layer[g.indices] < hp.layer[src]
    if alive is not None:
        mask &= alive[g.indices]
    cs = np.concatenate([np.zeros(1, np.int64), np.cumsum(mask)])
    return cs[g.indptr[1:]] - cs[g.indptr[:-1]]


def mis_probability(d: int) -> float:
    return min(1.0, 1.0 / (d * d))


def reduce_once(g_view: GraphView, kind: str, d: int, seed: int):
    """One phase: partition with threshold d, mark/propose, select, strip.

    Returns ``(solution-in-original-ids, remainder view, phase report entry)``.
    Propagates :class:`StallError` from the partition.
    """
    if g_view.alive_count() == 0:
        raise ValueError("reduce_once needs a nonempty graph view")
    sub, ids = g_view.compact()
    delta_before = sub.max_degree()
    hp = h_partition(sub, d)
    if kind == "matching":
        props = mark_and_propose_matching(sub, hp, seed)
        sol_c = select_matching(sub, hp, props)
    elif kind == "mis":
        props = mark_and_propose_mis(sub, hp, mis_probability(d), seed)
        sol_c = select_mis(sub, hp, props)
    else:
        raise ValueError(f"unknown kind {kind!r}")

    heavy = d ** 4
    indeg = _in_degrees(sub, hp)
    heavy_before = int((indeg >= heavy).sum())
    alive_sub = np.ones(sub.n, np.bool_)
    alive_sub[sol_c.removed] = False
    indeg_after = _in_degrees(sub, hp, alive_sub)
    heavy_after = int(((indeg >= heavy) & alive_sub & (indeg_after >= heavy)).sum())

    selected = ids[sol_c.selected] if sol_c.selected.size else sol_c.selected
    removed = ids[sol_c.removed]
    remainder = g_view.copy()
    remainder.alive[removed] = False
    entry = {
        "delta_before": int(delta_before),
        "d_used": int(d),
        "heavy_nodes_before": heavy_before,
        "heavy_survivors_after": heavy_after,
        "delta_after": remainder.max_alive_degree(),
        "alive_before": int(ids.size),
        "ell": hp.ell,
        "layer_sizes": [int(x) for x in hp.layer_sizes()],
    }
    return PartialSolution(kind=kind, selected=selected, removed=removed), remainder, entry


def phase_threshold(delta: int, exponent: float, d_floor: int | None = None) -> int:
    """The peeling threshold for a phase at max degree ``delta``."""
    d = max(1, math.ceil(delta ** exponent - 1e-9))
    if d_floor is not None:
        d = max(d, d_floor)
    return d


def degree_reduce(
    g: Graph,
    kind: str,
    target_delta: int,
    exponent: float = 0.1,
    seed: int = 0,
    *,
    d_floor: int | None = None,
    max_phases: int = 64,
):
    """Iterate reduce_once with d = ceil(Δ^exponent) until Δ <= target_delta.

    A phase that stalls or fails to decrease Δ ends the loop with a warning
    entry in the report instead of raising — small graphs legitimately hit
    both cases, and the accumulated solution stays valid either way.
    """
    if target_delta < 1:
        raise ValueError("target_delta must be >= 1")
    view = GraphView.full(g)
    total = PartialSolution.empty(kind)
    report = ReductionReport()
    for phase in range(max_phases):
        delta = view.max_alive_degree()
        if delta <= target_delta:
            break
        d = phase_threshold(delta, exponent, d_floor)
        try:
            sol, view2, entry = reduce_once(view, kind, d, rng.derive_seed(seed, phase))
        except StallError as exc:
            report.phases.append(
                {
                    "delta_before": int(delta),
                    "d_used": int(d),
                    "heavy_nodes_before": 0,
                    "heavy_survivors_after": 0,
                    "delta_after": int(delta),
                    "stalled": True,
                    "stall_reason": str(exc),
                }
            )
            break
        total = total.merge(sol)
        report.phases.append(entry)
        view = view2
        if entry["delta_after"] >= delta:
            entry["reduced"] = False
            break
    return total, view, report


# ---------------------------------------------------------------------------
# greedy finish (priority rounds on the remainder) and verification
# ---------------------------------------------------------------------------


def _edge_keys(edges: np.ndarray, n: int) -> np.ndarray:
    return edges[:, 0] * np.int64(n) + edges[:, 1]


def luby_matching_round(g: Graph, alive: np.ndarray, seed: int, round_idx: int) -> np.ndarray:
    """One priority round: every alive edge draws a priority; an edge joins the
    matching iff it beats all alive edges sharing either endpoint.  Returns the
    (k, 2) selected edges; the caller removes their endpoints."""
    e = g.edges
    live = alive[e[:, 0]] & alive[e[:, 1]]
    e = e[live]
    if not e.shape[0]:
        return np.empty((0, 2), np.int64)
    pri = rng.hash_u64(seed, rng.GREEDY_EDGE, round_idx, _edge_keys(e, g.n))
    # total order: (priority, edge key); ranks make argmin comparisons exact
    order = np.lexsort((_edge_keys(e, g.n), pri))
    rank = np.empty(e.shape[0], np.int64)
    rank[order] = np.arange(e.shape[0], dtype=np.int64)
    best = np.full(g.n, np.iinfo(np.int64).max, np.int64)
    np.minimum.at(best, e[:, 0], rank)
    np.minimum.at(best, e[:, 1], rank)
    win = (rank == best[e[:, 0]]) & (rank == best[e[:, 1]])
    return e[win]


def luby_mis_round(g: Graph, alive: np.ndarray, seed: int, round_idx: int) -> np.ndarray:
    """One priority round: every alive node draws a priority; a node joins iff
    it beats all alive neighbors.  Isolated alive nodes always join.  Returns
    selected node ids; the caller removes them and their neighbors."""
    nodes = np.flatnonzero(alive)
    if not nodes.size:
        return nodes
    pri = rng.hash_u64(seed, rng.GREEDY_NODE, round_idx, np.arange(g.n))
    order = np.lexsort((np.arange(g.n), pri))
    rank = np.empty(g.n, np.int64)
    rank[order] = np.arange(g.n, dtype=np.int64)
    e = g.edges
    live = alive[e[:, 0]] & alive[e[:, 1]]
    e = e[live]
    nbest = np.full(g.n, np.iinfo(np.int64).max, np.int64)
    np.minimum.at(nbest, e[:, 0], rank[e[:, 1]])
    np.minimum.at(nbest, e[:, 1], rank[e[:, 0]])
    return nodes[rank[nodes] < nbest[nodes]]


def finish_greedy(g_view: GraphView, kind: str, seed: int, *, max_rounds: int = 10_000):
    """Priority rounds until no alive edges remain (then, for MIS, sweep up the
    isolated leftovers).  Shared round helpers keep this bit-identical with the
    cluster execution of the same finish."""
    g = g_view.graph
    alive = g_view.alive.copy()
    total = PartialSolution.empty(kind)
    for round_idx in range(max_rounds):
        if kind == "matching":
            won = luby_matching_round(g, alive, seed, round_idx)
            if not won.shape[0]:
                break
            alive[won[:, 0]] = False
            alive[won[:, 1]] = False
            total = total.merge(
                PartialSolution(kind=kind, selected=won, removed=np.unique(won))
            )
        else:
            won = luby_mis_round(g, alive, seed, round_idx)
            if not won.size:
                break
            _, nb = gather_segments(g.indptr, g.indices, won)
            removed = np.unique(np.concatenate([won, nb[alive[nb]]]))
            alive[removed] = False
            total = total.merge(PartialSolution(kind=kind, selected=won, removed=removed))
    return total


def solve(
    g: Graph,
    kind: str,
    target_delta: int,
    seed: int,
    *,
    exponent: float = 0.1,
    d_floor: int | None = None,
):
    """Reference end-to-end run: degree reduction, then the greedy finish on
    the low-degree remainder.  The cluster pipeline reproduces this output
    word-for-word given the same arguments."""
    sol, view, report = degree_reduce(
        g, kind, target_delta, exponent=exponent, seed=seed, d_floor=d_floor
    )
    fin = finish_greedy(view, kind, rng.derive_seed(seed, rng.FINISH_PHASE))
    return sol.merge(fin), report


def verify_maximal(g: Graph, sol: PartialSolution) -> bool:
    """Maximality oracle.  Matching: pairwise non-incident and no edge with two
    unmatched endpoints.  MIS: independent, and every node selected or adjacent
    to a selected node."""
    if sol.kind == "matching":
        sel = sol.selected
        if sel.size:
            ends = sel.ravel()
            if np.unique(ends).size != ends.size:
                return False
            keys = set(_edge_keys(np.sort(sel, axis=1), g.n).tolist())
            if not keys <= set(_edge_keys(g.edges, g.n).tolist()):
                return False
        matched = np.zeros(g.n, np.bool_)
        matched[sel.ravel()] = True
        e = g.edges
        return bool((matched[e[:, 0]] | matched[e[:, 1]]).all())
    if sol.kind == "mis":
        in_set = np.zeros(g.n, np.bool_)
        in_set[sol.selected] = True
        e = g.edges
        if (in_set[e[:, 0]] & in_set[e[:, 1]]).any():
            return False
        cov = in_set.copy()
        np.logical_or.at(cov, e[:, 0], in_set[e[:, 1]])
        np.logical_or.at(cov, e[:, 1], in_set[e[:, 0]])
        return bool(cov.all())
    raise ValueError(f"unknown kind {sol.kind!r}")


# ---------------------------------------------------------------------------
# arboricity-oblivious schedule
# ---------------------------------------------------------------------------


@dataclass
class ScheduleResult:
    solution: PartialSolution
    estimates: list[int]
    accepted_estimate: int
    reports: list[ReductionReport]


def _decay_holds(report: ReductionReport, lam: int) -> bool:
    for ph in report.phases:
        if ph.get("stalled"):
            return False
        sizes = np.array(ph.get("layer_sizes", []), dtype=np.float64)
        if sizes.size <= 1:
            continue
        suf = np.cumsum(sizes[::-1])[::-1]
        if (suf[1:] > (2.0 * lam / ph["d_used"]) * suf[:-1] + 1e-9).any():
            return False
    return True


def arboricity_schedule(g: Graph, kind: str, seed: int) -> ScheduleResult:
    """Run the reduction without knowing the graph's sparsity: try doubly
    exponentially growing estimates (2, 4, 16, 256, ...) until the layer-decay
    law holds for every phase at that estimate.  Output validity never depends
    on the estimate; the estimate only controls progress guarantees."""
    lam_hat = 2
    estimates = []
    reports = []
    while True:
        estimates.append(lam_hat)
        d_floor = 2 * lam_hat + 1
        sol, view, report = degree_reduce(
            g,
            kind,
            target_delta=max(1, 2 * lam_hat),
            seed=rng.derive_seed(seed, lam_hat),
            d_floor=d_floor,
        )
        reports.append(report)
        if _decay_holds(report, lam_hat) or lam_hat >= g.n:
            finish = finish_greedy(view, kind, rng.derive_seed(seed, rng.FINISH_PHASE))
            return ScheduleResult(
                solution=sol.merge(finish),
                estimates=estimates,
                accepted_estimate=lam_hat,
                reports=reports,
            )
        lam_hat = lam_hat * lam_hat
