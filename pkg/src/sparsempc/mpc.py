"""Cluster execution of the degree-reduction pipeline.

The partition is built in repetitions: each repetition peels every node whose
layer index (within the current remainder) is at most the hop radius, because
a radius-r ball determines layers up to r.  Hop radii double once per
iteration by connecting 1-hop neighborhoods into cliques (virtual edges), so
one repetition of iteration i clears up to 2^i layers in O(1) rounds.  Nodes
get removed in chunks of consecutive layers; selection later walks the chunks
in reverse removal order.

Numerically, every coin comes from the same counter streams the centralized
module uses, drawn on the per-phase compacted subgraph, so layer maps,
proposal sets, selections, and the final solution are bit-identical to
:mod:`sparsempc.reduction` outputs.  The cluster side contributes the round,
traffic, and memory metering: message volumes are computed from real ball
sizes (bounded-radius BFS) and charged against the machine budgets of
:mod:`sparsempc.runtime`.

Two metering regimes: ``adaptive=False`` (default) runs the fixed repetition
schedule of an oblivious coordinator and checks progress once per iteration;
``adaptive=True`` pays an aggregation-tree sync after every repetition and
stops a repetition loop as soon as the remainder is exhausted.  Outputs are
identical in both; only the traces differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .graph import Graph, GraphView
from .kernels import alive_degrees, ball_stats, gather_segments, peel_layers
from .peeling import HPartition, StallError
from .reduction import (
    PartialSolution,
    ProposalSet,
    ReductionReport,
    _in_degrees,
    luby_matching_round,
    luby_mis_round,
    mark_and_propose_matching,
    mark_and_propose_mis,
    mis_probability,
    phase_threshold,
    select_matching,
    select_mis,
)
from .runtime import Cluster, ClusterConfig, init_cluster, rebalance
from .runtime import metrics as runtime_metrics

REPS_FIRST = 60
REPS_LATER = 20


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentiationSchedule:
    delta_max: int
    S: int
    k: int | None  # None in fallback mode
    fallback: bool
    phases: tuple  # ((iteration, radius, repetitions), ...)
    preprocessing_layers: int
    c_pre: float


def compute_schedule(
    delta_max: int,
    S: int,
    n: int,
    delta: float,
    *,
    c_pre: float = 2.0,
    reps_first: int = REPS_FIRST,
    reps_later: int = REPS_LATER,
    allow_custom_reps: bool = False,
) -> ExponentiationSchedule:
    """Pick the deepest hop-doubling level k with delta_max^(2^k + 1) <= S.

    When even the first doubling is unaffordable (delta_max^2 > S) the
    schedule flags fallback mode: layer-by-layer peeling at radius 1, no
    virtual edges, k undefined.
    """
    if not allow_custom_reps and (reps_first, reps_later) != (REPS_FIRST, REPS_LATER):
        raise ValueError("non-default repetition counts need allow_custom_reps=True")
    delta_max = int(delta_max)
    loglog = math.log2(max(2.0, math.log2(max(2.0, n))))
    pre = int(math.ceil(c_pre * math.log2(max(2.0, (1.0 / delta) * loglog))))
    if delta_max >= 2 and delta_max ** 2 > S:
        return ExponentiationSchedule(
            delta_max=delta_max,
            S=S,
            k=None,
            fallback=True,
            phases=(),
            preprocessing_layers=0,
            c_pre=c_pre,
        )
    k = 0
    if delta_max >= 2:
        while delta_max ** (2 ** (k + 1) + 1) <= S:
            k += 1
    phases = tuple(
        (i, 2 ** i, reps_first if i == 0 else reps_later) for i in range(k + 1)
    )
    return ExponentiationSchedule(
        delta_max=delta_max,
        S=S,
        k=k,
        fallback=False,
        phases=phases,
        preprocessing_layers=pre,
        c_pre=c_pre,
    )


# ---------------------------------------------------------------------------
# chunks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Chunk:
    layer_lo: int
    layer_hi: int
    radius: int
    iteration: int  # -1 for preprocessing / fallback repetitions
    repetition: int
    members: np.ndarray  # original node ids, ascending


@dataclass
class ChunkIndex:
    chunks: list[Chunk] = field(default_factory=list)

    def validate(self, hp: HPartition) -> None:
        """Chunks must tile layers 1..ell consecutively in removal order and
        contain exactly the nodes of their layer interval."""
        expect = 1
        for c in self.chunks:
            if c.layer_lo != expect or c.layer_hi < c.layer_lo:
                raise ValueError(f"chunk interval broken at layer {expect}")
            if c.layer_hi - c.layer_lo + 1 > c.radius:
                raise ValueError("chunk spans more layers than its hop radius")
            want = np.flatnonzero((hp.layer >= c.layer_lo) & (hp.layer <= c.layer_hi))
            if not np.array_equal(want, c.members):
                raise ValueError(f"chunk members disagree with layer map at {c.layer_lo}")
            expect = c.layer_hi + 1
        if expect != hp.ell + 1:
            raise ValueError(f"chunks cover layers 1..{expect - 1}, partition has {hp.ell}")


# ---------------------------------------------------------------------------
# partition construction
# ---------------------------------------------------------------------------


def _removal_round(cluster: Cluster, g: Graph, removed: np.ndarray, alive_after: np.ndarray, label: str) -> None:
    """Removed nodes tell their still-alive neighbors to strike the edge."""
    if removed.size == 0:
        cluster.execute_round_bulk(
            np.empty(0, np.int64), np.empty(0, np.int64), 1, label=label
        )
        return
    src, tgt = gather_segments(g.indptr, g.indices, removed)
    live = alive_after[tgt]
    out = np.bincount(src[live], minlength=g.n)[removed]
    in_cnt = np.bincount(tgt[live], minlength=g.n)
    in_nodes = np.flatnonzero(in_cnt)
    cluster.execute_round_volumes(
        removed, out, in_nodes, in_cnt[in_nodes], label=label
    )


class _BallCache:
    """Iteration-start ball statistics, computed once and reused by every
    round of the iteration: clique-step volumes at the half radius, gather
    volumes and virtual additions at the full radius.  Balls only shrink as
    repetitions remove nodes, so these stay valid upper bounds for the budget
    ledgers.  Also feeds the iteration-boundary rebalance: nodes are packed
    by their predicted traffic (each node knows its outgoing volume locally
    and learns the incoming one from a sizes-first handshake)."""

    def __init__(self, g: Graph, alive: np.ndarray, radius: int):
        self.ids = ids = np.flatnonzero(alive)
        deg = alive_degrees(g.indptr, g.indices, alive)
        row_words = 1 + deg  # node id + adjacency entries
        self.row_words = row_words
        half = radius // 2
        ones = np.ones(g.n, np.int64)
        cnt_half, _ = ball_stats(g.indptr, g.indices, alive, ids, half, ones)
        vdeg_half = np.zeros(g.n, np.int64)
        vdeg_half[ids] = cnt_half - 1
        _, recv_half = ball_stats(g.indptr, g.indices, alive, ids, half, vdeg_half)
        self.clique_send = vdeg_half[ids] ** 2
        self.clique_recv = recv_half - vdeg_half[ids]
        cnt, wsum = ball_stats(g.indptr, g.indices, alive, ids, radius, row_words)
        cnt_plain, _ = ball_stats(g.indptr, g.indices, alive, ids, radius, ones)
        self.count = np.zeros(g.n, np.int64)
        self.gather = np.zeros(g.n, np.int64)
        self.count[ids] = cnt_plain
        self.gather[ids] = wsum - row_words[ids]  # pulls exclude own row
        self.added = (cnt_plain - 1) - deg[ids]

    def traffic_weights(self, stored: np.ndarray) -> np.ndarray:
        """Per-node packing weight: the worst single-round volume this node
        contributes during the iteration, floored at its stored words so the
        storage ledgers stay balanced too.  Full-length array."""
        w = stored.astype(np.int64, copy=True)
        ids = self.ids
        peak = np.maximum(self.clique_send, self.clique_recv)
        peak = np.maximum(peak, self.row_words[ids] * (self.count[ids] - 1))
        peak = np.maximum(peak, self.gather[ids])
        w[ids] = np.maximum(w[ids], peak)
        return w


def connect_cliques(
    cluster: Cluster,
    alive: np.ndarray,
    radius: int,
    delta_max: int,
    *,
    cache: _BallCache | None = None,
    label: str = "partition-clique",
) -> dict:
    """Hop-doubling step of an iteration with target radius 2^i >= 2: every
    node shares its current virtual neighbor list with those neighbors, after
    which virtual adjacency covers distance <= 2^i.  Virtual words land in the
    storage ledgers; per-node additions are asserted against delta_max^(2^i)
    and totals are returned for the O(n/Delta)-law bookkeeping."""
    g = cluster.graph
    if cache is None:
        cache = _BallCache(g, alive, radius)
    ids = cache.ids
    added = cache.added
    bound = delta_max ** radius
    worst = int(added.max()) if added.size else 0
    if worst > bound:
        raise AssertionError(
            f"virtual additions {worst} exceed {delta_max}^{radius} = {bound}"
        )
    cluster.execute_round_volumes(
        ids,
        cache.clique_send,
        ids,
        cache.clique_recv,
        storage_nodes=ids,
        storage_delta=added - cluster.extra_words[ids],
        label=label,
    )
    return {
        "virtual_added_total": int(added.sum()),
        "virtual_added_max": worst,
        "virtual_bound_per_node": int(bound),
        "alive": int(ids.size),
    }


def gather_and_peel(
    cluster: Cluster,
    radius: int,
    d: int,
    *,
    alive: np.ndarray,
    cache: _BallCache | None = None,
    label_prefix: str = "partition",
) -> tuple[np.ndarray, int]:
    """One repetition: each alive node learns its layer-if-at-most-``radius``
    (else "deeper", encoded 0) from its radius-ball and drops out if layered.

    Radius 1 needs no gathering (degrees are local); it costs one removal
    round.  Radius >= 2 costs one gather round whose volumes come from the
    iteration ball cache.  Mutates ``alive``.  Raises StallError exactly when
    the centralized peeling would: a nonempty remainder where nobody has
    degree <= d.
    """
    g = cluster.graph
    rel, t = peel_layers(g.indptr, g.indices, alive, d, radius)
    removed = np.flatnonzero(rel > 0)
    if radius >= 2:
        cur = np.flatnonzero(alive)
        if cur.size:
            sent = cache.row_words[cur] * (cache.count[cur] - 1)
            recv = cache.gather[cur]
        else:
            # faithful repetitions keep running after the subgraph empties;
            # they are metered as silent gather rounds (no cache needed)
            sent = recv = np.empty(0, np.int64)
        cluster.execute_round_volumes(
            cur, sent, cur, recv, label=f"{label_prefix}-gather"
        )
        alive[removed] = False
    else:
        alive[removed] = False
        _removal_round(cluster, g, removed, alive, f"{label_prefix}-peel")
    if t < radius and alive.any():
        stuck = int(alive.sum())
        raise StallError(
            f"peeling stalled with {stuck} nodes of remaining degree > {d}"
        )
    return rel, t


def mpc_h_partition(
    cluster: Cluster,
    d: int,
    schedule: ExponentiationSchedule,
    *,
    alive: np.ndarray | None = None,
    adaptive: bool = False,
) -> tuple[HPartition, ChunkIndex, dict]:
    """Build the full layer map of the alive subgraph on the cluster.

    Returns the partition (global layer indices over original node ids; 0
    marks nodes outside the alive mask), the chunk removal history, and a
    stats dict (per-iteration virtual-edge counts, alive counts, repetitions
    used).  Round traces accumulate on the cluster.
    """
    g = cluster.graph
    members = np.ones(g.n, np.bool_) if alive is None else np.asarray(alive, np.bool_)
    work = members.copy()
    layer = np.zeros(g.n, np.int64)
    offset = 0
    chunks = ChunkIndex()
    sync = 2 * cluster.agg_depth()
    stats: dict = {
        "alive_start": int(work.sum()),
        "fallback": schedule.fallback,
        "k": schedule.k,
        "preprocessing": {"target_layers": schedule.preprocessing_layers, "reps_used": 0},
        "iterations": [],
        "outer_passes": 0,
    }

    def run_rep(radius: int, iteration: int, rep: int, cache: _BallCache | None) -> int:
        nonlocal offset
        rel, t = gather_and_peel(
            cluster, radius, d, alive=work, cache=cache, label_prefix="partition"
        )
        removed = np.flatnonzero(rel > 0)
        if removed.size:
            layer[removed] = offset + rel[removed]
            chunks.chunks.append(
                Chunk(
                    layer_lo=offset + 1,
                    layer_hi=offset + t,
                    radius=radius,
                    iteration=iteration,
                    repetition=rep,
                    members=removed,
                )
            )
            offset += t
        if adaptive:
            cluster.control_rounds(sync, label="partition-sync")
        return removed.size

    if schedule.fallback:
        rep = 0
        entry = {"iteration": -1, "radius": 1, "alive_before": int(work.sum()), "reps_used": 0}
        while work.any():
            if rep % 16 == 0:
                rebalance(cluster, work, keep=members, label="partition-rebalance")
                if not adaptive:
                    cluster.control_rounds(sync, label="partition-sync")
            run_rep(1, -1, rep, None)
            rep += 1
        entry["reps_used"] = rep
        stats["iterations"].append(entry)
        stats["ell"] = offset
        return HPartition(layer=layer, d=d, ell=offset), chunks, stats

    # pre-processing: strip the lowest layers one by one to free memory
    for rep in range(schedule.preprocessing_layers):
        if not work.any() and adaptive:
            break
        run_rep(1, -1, rep, None)
        stats["preprocessing"]["reps_used"] = rep + 1
    stats["preprocessing"]["layers_removed"] = offset

    while work.any():
        stats["outer_passes"] += 1
        for iteration, radius, reps in schedule.phases:
            if not work.any() and adaptive:
                break
            entry = {
                "iteration": iteration,
                "radius": radius,
                "alive_before": int(work.sum()),
                "reps_used": 0,
            }
            cache = None
            if radius >= 2 and work.any():
                # pack machines by the traffic this iteration will move, not
                # by stored words: clique and gather volumes grow with the
                # squared virtual degree and would pile up on machines that
                # happen to hold many nodes
                cache = _BallCache(g, work, radius)
                rebalance(
                    cluster,
                    work,
                    keep=members,
                    weights=cache.traffic_weights(cluster.node_words()),
                    label="partition-rebalance",
                )
                vstats = connect_cliques(
                    cluster, work, radius, schedule.delta_max, cache=cache
                )
                entry.update(vstats)
            else:
                rebalance(cluster, work, keep=members, label="partition-rebalance")
            for rep in range(reps):
                if adaptive and not work.any():
                    break
                run_rep(radius, iteration, rep, cache)
                entry["reps_used"] = rep + 1
            if not adaptive:
                cluster.control_rounds(sync, label="partition-sync")
            stats["iterations"].append(entry)
        if stats["outer_passes"] > g.n:
            raise RuntimeError("partition failed to terminate")

    stats["ell"] = offset
    return HPartition(layer=layer, d=d, ell=offset), chunks, stats


# ---------------------------------------------------------------------------
# mark/propose and chunked selection
# ---------------------------------------------------------------------------


@dataclass
class DistributedProposals:
    kind: str
    proposals: ProposalSet  # over compacted phase-subgraph ids
    sub: Graph
    ids: np.ndarray  # compacted id -> original id
    hp_sub: HPartition
    params: dict


def mpc_mark_propose(
    cluster: Cluster, hp: HPartition, kind: str, params: dict, seed: int
) -> DistributedProposals:
    """Marking and proposing over the whole phase subgraph, before any chunk
    is visited.  Costs one layer-exchange round plus, for matching, a marked-
    edge round and a proposal round; for the independent set the marks of
    same-layer neighbors are the only exchange."""
    g = cluster.graph
    mask = hp.layer > 0
    sub, ids = GraphView(g, mask).compact()
    hp_sub = HPartition(layer=hp.layer[ids].copy(), d=hp.d, ell=hp.ell)
    deg = sub.degrees.astype(np.int64)
    cluster.execute_round_volumes(ids, deg, ids, deg, label="markpropose")
    if kind == "matching":
        props = mark_and_propose_matching(sub, hp_sub, seed)
        mk, pr = props.marked, props.proposed
        cluster.execute_round_bulk(ids[mk[:, 0]], ids[mk[:, 1]], 1, label="markpropose")
        cluster.execute_round_bulk(ids[pr[:, 1]], ids[pr[:, 0]], 1, label="markpropose")
    elif kind == "mis":
        props = mark_and_propose_mis(sub, hp_sub, params["p"], seed)
        is_marked = np.zeros(sub.n, np.bool_)
        is_marked[props.marked] = True
        src = np.repeat(np.arange(sub.n, dtype=np.int64), sub.degrees)
        same = hp_sub.layer[sub.indices] == hp_sub.layer[src]
        flow = same & is_marked[src]
        out = np.bincount(src[flow], minlength=sub.n)
        inc = np.bincount(sub.indices[flow], minlength=sub.n)
        cluster.execute_round_volumes(ids, out, ids, inc, label="markpropose")
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return DistributedProposals(
        kind=kind, proposals=props, sub=sub, ids=ids, hp_sub=hp_sub, params=dict(params)
    )


def _notify_round(cluster: Cluster, g: Graph, senders: np.ndarray, mask: np.ndarray, label: str) -> None:
    """Senders push one word along each incident edge whose other end is in
    ``mask`` (the not-yet-finished phase nodes)."""
    if senders.size == 0:
        cluster.execute_round_bulk(np.empty(0, np.int64), np.empty(0, np.int64), 1, label=label)
        return
    src, tgt = gather_segments(g.indptr, g.indices, senders)
    live = mask[tgt]
    out = np.bincount(src[live], minlength=g.n)[senders]
    inc = np.bincount(tgt[live], minlength=g.n)
    in_nodes = np.flatnonzero(inc)
    cluster.execute_round_volumes(senders, out, in_nodes, inc[in_nodes], label=label)


def mpc_select(
    cluster: Cluster,
    hp: HPartition,
    kind: str,
    proposals: DistributedProposals,
    chunks: ChunkIndex,
) -> PartialSolution:
    """Chunk-wise selection in reverse removal order.

    Each chunk member re-gathers its retained radius ball with proposal flags
    (one round), winners notify their neighbors (one round), and for the
    independent set the removed neighbors — which may sit in other chunks —
    get one extra round to propagate.  The outcome per chunk matches the
    global highest-layer-first sweep because proposal chains never leave a
    chunk's layer interval going down and the reverse order resolves every
    cross-chunk dependency before it is needed.
    """
    sub, ids, hp_sub = proposals.sub, proposals.ids, proposals.hp_sub
    if kind == "matching":
        sol_sub = select_matching(sub, hp_sub, proposals.proposals)
    elif kind == "mis":
        sol_sub = select_mis(sub, hp_sub, proposals.proposals)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    g = cluster.graph
    removed_orig = np.zeros(g.n, np.bool_)
    removed_orig[ids[sol_sub.removed]] = True
    pending = hp.layer > 0  # phase nodes whose fate is not yet committed
    if kind == "matching":
        sel_edges = ids[sol_sub.selected] if sol_sub.selected.size else sol_sub.selected
        sel_layer = hp.layer[sel_edges[:, 1]] if sel_edges.size else np.empty(0, np.int64)
    else:
        sel_nodes = ids[sol_sub.selected]
        sel_layer = hp.layer[sel_nodes]

    for c in reversed(chunks.chunks):
        if c.layer_hi - c.layer_lo + 1 > c.radius:
            raise AssertionError("chunk wider than its hop radius")
        words = cluster.base_words[c.members] + cluster.extra_words[c.members]
        cluster.execute_round_volumes(c.members, words, c.members, words, label="select")
        in_chunk = (sel_layer >= c.layer_lo) & (sel_layer <= c.layer_hi)
        if kind == "matching":
            winners = np.unique(sel_edges[in_chunk]) if sel_edges.size else sel_edges
            _notify_round(cluster, g, winners, pending, "select")
        else:
            winners = sel_nodes[in_chunk]
            _notify_round(cluster, g, winners, pending, "select")
            # neighbors of winners leave the graph too; they tell their own
            # neighborhoods, which may live in chunks not yet visited
            _, nb = gather_segments(g.indptr, g.indices, winners)
            felled = np.unique(nb[pending[nb] & removed_orig[nb]])
            _notify_round(cluster, g, felled, pending, "select")
        gone = c.members[removed_orig[c.members]]
        cluster.drop_nodes(gone)
        keep = c.members[~removed_orig[c.members]]
        if keep.size:
            cluster.add_extra_words(keep, -cluster.extra_words[keep])
        pending[c.members] = False
    selected = ids[sol_sub.selected] if sol_sub.selected.size else sol_sub.selected
    return PartialSolution(kind=kind, selected=selected, removed=ids[sol_sub.removed])


# ---------------------------------------------------------------------------
# finish + full pipeline
# ---------------------------------------------------------------------------


def _mpc_finish(cluster: Cluster, view: GraphView, kind: str, seed: int) -> PartialSolution:
    """Round-by-round priority finish on the low-degree remainder; identical
    output to reduction.finish_greedy under the same seed."""
    g = view.graph
    alive = view.alive.copy()
    total = PartialSolution.empty(kind)
    sync = 2 * cluster.agg_depth()
    round_idx = 0
    while True:
        if kind == "matching":
            won = luby_matching_round(g, alive, seed, round_idx)
            if not won.shape[0]:
                break
            nodes = np.flatnonzero(alive & (alive_degrees(g.indptr, g.indices, alive) > 0))
            cluster.execute_round_volumes(nodes, 1, nodes, 1, label="finish")
            ends = np.unique(won)
            alive[ends] = False
            _notify_round(cluster, g, ends, alive, "finish")
            cluster.drop_nodes(ends)
            total = total.merge(PartialSolution(kind=kind, selected=won, removed=ends))
        else:
            won = luby_mis_round(g, alive, seed, round_idx)
            if not won.size:
                break
            _notify_round(cluster, g, won, alive, "finish")
            _, nb = gather_segments(g.indptr, g.indices, won)
            removed = np.unique(np.concatenate([won, nb[alive[nb]]]))
            alive[removed] = False
            _notify_round(cluster, g, removed, alive, "finish")
            cluster.drop_nodes(removed)
            total = total.merge(PartialSolution(kind=kind, selected=won, removed=removed))
        cluster.control_rounds(sync, label="finish-sync")
        round_idx += 1
    return total


def partition_rounds(met: dict) -> int:
    """Rounds spent constructing partitions (criterially the quantity that
    should scale like (1/delta) * loglog n)."""
    return sum(v for k, v in met["rounds_by_label"].items() if k.startswith("partition"))


def mpc_pipeline(
    g: Graph,
    cfg: ClusterConfig,
    kind: str,
    target_delta: int,
    seed: int,
    *,
    exponent: float = 0.1,
    d_floor: int | None = None,
    c_pre: float = 2.0,
    adaptive: bool = False,
    max_phases: int = 64,
    name: str = "pipeline",
) -> tuple[PartialSolution, dict]:
    """Degree-reduction phases, then the priority finish, all metered.

    Mirrors :func:`reduction.solve` decision-for-decision: same per-phase
    seeds, same thresholds, same stall and no-progress handling, so the
    returned solution is identical; the metrics carry rounds by label, peak
    words, violations, per-phase reports and partition stats.
    """
    cluster = init_cluster(g, cfg, seed, name=name)
    view = GraphView.full(g)
    total = PartialSolution.empty(kind)
    report = ReductionReport()
    partition_stats: list[dict] = []
    for phase in range(max_phases):
        delta = view.max_alive_degree()
        if delta <= target_delta:
            break
        d = phase_threshold(delta, exponent, d_floor)
        seed_p = rng.derive_seed(seed, phase)
        rebalance(cluster, view.alive, label="rebalance")
        schedule = compute_schedule(delta, cfg.S, g.n, cfg.delta, c_pre=c_pre)
        try:
            hp, chunks, pstats = mpc_h_partition(
                cluster, d, schedule, alive=view.alive, adaptive=adaptive
            )
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
        partition_stats.append(pstats)
        params = {"p": mis_probability(d)} if kind == "mis" else {}
        dist = mpc_mark_propose(cluster, hp, kind, params, seed_p)
        sol = mpc_select(cluster, hp, kind, dist, chunks)

        sub, ids, hp_sub = dist.sub, dist.ids, dist.hp_sub
        heavy = d ** 4
        indeg = _in_degrees(sub, hp_sub)
        alive_sub = np.ones(sub.n, np.bool_)
        alive_sub[np.searchsorted(ids, sol.removed)] = False
        indeg_after = _in_degrees(sub, hp_sub, alive_sub)
        remainder = view.copy()
        remainder.alive[sol.removed] = False
        entry = {
            "delta_before": int(delta),
            "d_used": int(d),
            "heavy_nodes_before": int((indeg >= heavy).sum()),
            "heavy_survivors_after": int(
                ((indeg >= heavy) & alive_sub & (indeg_after >= heavy)).sum()
            ),
            "delta_after": remainder.max_alive_degree(),
            "alive_before": int(ids.size),
            "ell": hp_sub.ell,
            "layer_sizes": [int(x) for x in hp_sub.layer_sizes()],
        }
        total = total.merge(sol)
        report.phases.append(entry)
        view = remainder
        # survivors' stored rows shrink to their remaining degree
        srv = np.flatnonzero(view.alive)
        cluster.set_base_words(srv, view.alive_degrees()[srv])
        if entry["delta_after"] >= delta:
            entry["reduced"] = False
            break
    fin = _mpc_finish(cluster, view, kind, rng.derive_seed(seed, rng.FINISH_PHASE))
    total = total.merge(fin)
    cluster.control_rounds(2 * cluster.agg_depth(), label="collect")
    met = runtime_metrics(cluster)
    met["partition_rounds"] = partition_rounds(met)
    met["phases"] = report.phases
    met["partition_stats"] = partition_stats
    met["kind"] = kind
    met["target_delta"] = int(target_delta)
    met["adaptive"] = bool(adaptive)
    cluster.flush_trace()
    return total, met


# ---------------------------------------------------------------------------
# pipeline config files (key = value lines)
# ---------------------------------------------------------------------------

_CONFIG_TYPES = {
    "delta": float,
    "c_pre": float,
    "exponent": float,
    "target_delta": int,
    "kind": str,
    "seed": int,
    "adaptive": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}


def parse_pipeline_config(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = _CONFIG_TYPES[key](val)
    return out


def load_pipeline_config(path) -> dict:
    with open(path) as fh:
        return parse_pipeline_config(fh.read())
