"""Synchronous cluster simulator with hard per-machine word budgets.

Machines hold whole nodes (a node's adjacency never spans machines).  A round
is local computation everywhere, then an all-to-all routing step; a machine's
sent words, received words, and resident words must each stay within its
capacity S, and any violation aborts the run naming the machine and round.

Two execution paths share the same ledgers:

* :meth:`Cluster.execute_round` — the per-machine-callback path.  Messages are
  (destination node, payload) pairs; inboxes are delivered to the callback of
  the *next* round, matching the synchronous model.
* :meth:`Cluster.execute_round_bulk` — array path used by the graph pipeline:
  one call is one full round described by flat src/dst/word arrays.

Messages between nodes hosted on the same machine are local computation and
cost nothing.  Storage is metered in words: one word per adjacency entry
(an edge costs two words, one at each endpoint) plus whatever auxiliary words
the caller registers (virtual adjacency, retained chunk state).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .graph import Graph
from .kernels import pack_bins


class MPCError(RuntimeError):
    pass


class CapacityError(MPCError):
    """A node (or an unsplittable placement) cannot fit in one machine."""


class BudgetError(MPCError):
    def __init__(self, message: str, machine: int, round_idx: int):
        super().__init__(f"{message} (machine {machine}, round {round_idx})")
        self.machine = int(machine)
        self.round = int(round_idx)


class SendBudgetExceeded(BudgetError):
    pass


class ReceiveBudgetExceeded(BudgetError):
    pass


class MemoryExceeded(BudgetError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterConfig:
    n: int
    m: int
    delta: float
    S: int
    M: int
    c_total: float = 4.0
    edge_words: int = 1  # words per stored adjacency entry (2 per edge total)
    message_words: int = 1  # multiplier on payload word counts

    def __post_init__(self):
        if self.S < 1 or self.M < 1:
            raise ValueError("cluster needs S >= 1 and M >= 1")
        if self.M * self.S < self.m:
            raise ValueError(
                f"total memory M*S = {self.M * self.S} below input size m = {self.m}"
            )

    @classmethod
    def for_graph(cls, g: Graph, delta: float, c_total: float = 4.0) -> "ClusterConfig":
        """S = ceil(n^delta); M sized so M*S covers c_total * m * log2(n) words."""
        if not (0 < delta <= 1):
            raise ValueError(f"delta must be in (0, 1], got {delta}")
        n = max(2, g.n)
        S = int(math.ceil(n ** delta))
        polylog = max(1.0, math.log2(n))
        M = max(1, int(math.ceil(c_total * max(1, g.m) * polylog / S)))
        return cls(n=g.n, m=g.m, delta=delta, S=S, M=M, c_total=c_total)


@dataclass
class RoundTrace:
    round: int
    label: str
    peak_words: int
    peak_machine: int
    max_sent: int
    max_sent_machine: int
    max_received: int
    max_received_machine: int
    total_sent: int
    total_received: int
    # per-machine snapshots, kept only while the used-machine count is small
    words_used: np.ndarray | None = None
    sent: np.ndarray | None = None
    received: np.ndarray | None = None


@dataclass
class MachineView:
    """What one machine sees during a round: its id, resident nodes, and the
    messages addressed to those nodes in the previous round."""

    id: int
    nodes: np.ndarray
    inbox: dict[int, list[tuple[int, np.ndarray]]]
    round: int


_TRACE_KEEP_LIMIT = 4096


class Cluster:
    """Mutable cluster state; create via :func:`init_cluster`."""

    def __init__(self, g: Graph, cfg: ClusterConfig, seed: int, name: str = "run"):
        self.cfg = cfg
        self.graph = g
        self.seed = int(seed)
        self.name = name
        self.round_idx = 0
        self.traces: list[RoundTrace] = []
        self.violations: list[dict] = []
        self.budget_per_node = min(cfg.S, (cfg.M * cfg.S) // max(1, g.n))
        self.base_words = cfg.edge_words * g.degrees.astype(np.int64)
        self.extra_words = np.zeros(g.n, np.int64)
        self.node_machine = np.zeros(g.n, np.int64)
        self.machines_used = 1
        self.loads = np.zeros(1, np.int64)
        self._inbox: dict[int, list[tuple[int, np.ndarray]]] = {}
        self._peak_cache: tuple[int, int] | None = None  # (machine, words)
        self._trace_rows: list[dict] | None = None
        trace_dir = os.environ.get("MPC_TRACE_DIR")
        if trace_dir:
            self._trace_path = Path(trace_dir) / f"{name}.trace.ndjson"
            self._trace_rows = []
        else:
            self._trace_path = None

    # -- storage bookkeeping (free local operations, no round consumed) ----

    def node_words(self) -> np.ndarray:
        return self.base_words + self.extra_words

    def set_base_words(self, nodes: np.ndarray, words: np.ndarray) -> None:
        delta = np.asarray(words, np.int64) - self.base_words[nodes]
        np.add.at(self.loads, self.node_machine[nodes], delta)
        self.base_words[nodes] += delta
        self._peak_cache = None

    def add_extra_words(self, nodes: np.ndarray, delta) -> None:
        delta = np.broadcast_to(np.asarray(delta, np.int64), np.shape(nodes)).copy()
        np.add.at(self.loads, self.node_machine[nodes], delta)
        self.extra_words[nodes] += delta
        self._peak_cache = None

    def clear_extra_words(self) -> None:
        np.add.at(self.loads, self.node_machine, -self.extra_words)
        self.extra_words[:] = 0
        self._peak_cache = None

    def drop_nodes(self, nodes: np.ndarray) -> None:
        """Remove finished nodes; their words vanish from their machines."""
        w = self.node_words()[nodes]
        np.add.at(self.loads, self.node_machine[nodes], -w)
        self.base_words[nodes] = 0
        self.extra_words[nodes] = 0
        self._peak_cache = None

    def _loads_peak(self) -> tuple[int, int]:
        if self._peak_cache is None:
            if self.loads.size:
                m = int(self.loads.argmax())
                self._peak_cache = (m, int(self.loads[m]))
            else:
                self._peak_cache = (0, 0)
        return self._peak_cache

    def agg_depth(self) -> int:
        """Rounds for an S-ary aggregation tree over all machines."""
        if self.cfg.M <= 1:
            return 0
        return max(1, int(math.ceil(math.log(self.cfg.M) / math.log(max(2, self.cfg.S)))))

    # -- placement ----------------------------------------------------------

    def _place(self, nodes: np.ndarray, store_w: np.ndarray, phase: int) -> np.ndarray:
        """Pack ``nodes`` (with storage weights) into machines: heaviest first
        with a seeded shuffle among equals, sequential bins of capacity
        max(heaviest, 2 * ceil(total/M)).  Returns the new machine ids."""
        pack_w = np.maximum(store_w, 1)
        total = int(pack_w.sum())
        cap = max(int(pack_w.max()), 2 * math.ceil(total / self.cfg.M), 1)
        tie = rng.hash_u64(self.seed, rng.PLACEMENT, phase, nodes)
        order = np.lexsort((nodes, tie, -pack_w))
        bins = pack_bins(pack_w[order], cap)
        used = int(bins[-1]) + 1 if bins.size else 1
        if used > self.cfg.M:
            raise CapacityError(
                f"placement needs {used} machines but the cluster has {self.cfg.M}"
            )
        mach = np.empty(nodes.size, np.int64)
        mach[order] = bins
        return mach

    def _assign(self, nodes: np.ndarray, mach: np.ndarray, used: int) -> None:
        self.node_machine[nodes] = mach
        self.machines_used = used
        self.loads = np.bincount(mach, weights=self.node_words()[nodes], minlength=used).astype(
            np.int64
        )
        self._peak_cache = None

    # -- round execution ----------------------------------------------------

    def _finish_round(self, trace: RoundTrace) -> RoundTrace:
        """Append the trace, persist rows, enforce budgets, advance the clock."""
        S = self.cfg.S
        self.traces.append(trace)
        self._record_rows(trace)
        violation = None
        if trace.max_sent > S:
            violation = ("send", SendBudgetExceeded, trace.max_sent_machine, trace.max_sent)
        elif trace.max_received > S:
            violation = (
                "receive",
                ReceiveBudgetExceeded,
                trace.max_received_machine,
                trace.max_received,
            )
        elif trace.peak_words > S:
            violation = ("memory", MemoryExceeded, trace.peak_machine, trace.peak_words)
        self.round_idx += 1
        if violation is not None:
            kind, exc, machine, amount = violation
            self.violations.append(
                {"round": trace.round, "machine": machine, "kind": kind, "words": amount, "S": S}
            )
            self.flush_trace()
            raise exc(f"{kind} budget: {amount} words > S={S}", machine, trace.round)
        return trace

    def _check_and_trace(
        self,
        label: str,
        sent: np.ndarray,
        received: np.ndarray,
        *,
        inbox_words: np.ndarray | None = None,
    ) -> RoundTrace:
        """Shared budget check + ledger snapshot.  ``sent``/``received`` may be
        shorter than machines_used; missing tail means zero."""
        words = self.loads
        if inbox_words is not None:
            words = words.copy()
            words[: inbox_words.size] += inbox_words
        peak_m = int(words.argmax()) if words.size else 0
        peak = int(words[peak_m]) if words.size else 0
        ms = int(sent.argmax()) if sent.size else 0
        mr = int(received.argmax()) if received.size else 0
        trace = RoundTrace(
            round=self.round_idx,
            label=label,
            peak_words=peak,
            peak_machine=peak_m,
            max_sent=int(sent[ms]) if sent.size else 0,
            max_sent_machine=ms,
            max_received=int(received[mr]) if received.size else 0,
            max_received_machine=mr,
            total_sent=int(sent.sum()),
            total_received=int(received.sum()),
        )
        if self.machines_used <= _TRACE_KEEP_LIMIT:
            width = max(self.machines_used, words.size, sent.size, received.size)
            pad = lambda a: np.pad(np.asarray(a, np.int64), (0, width - a.size))
            trace.words_used = pad(words)
            trace.sent = pad(sent)
            trace.received = pad(received)
        return self._finish_round(trace)

    def execute_round_bulk(
        self,
        src: np.ndarray,
        dst: np.ndarray,
        words=1,
        *,
        storage_nodes: np.ndarray | None = None,
        storage_delta=None,
        label: str = "",
    ) -> RoundTrace:
        """One round from flat message arrays (src node, dst node, words each).

        ``storage_nodes``/``storage_delta`` register auxiliary words retained
        past this round (virtual adjacency etc.) before the memory check.
        """
        src = np.asarray(src, np.int64)
        dst = np.asarray(dst, np.int64)
        w = np.broadcast_to(np.asarray(words, np.int64), src.shape)
        sm = self.node_machine[src]
        dm = self.node_machine[dst]
        crossing = sm != dm
        w = w[crossing] * self.cfg.message_words
        sent = np.bincount(sm[crossing], weights=w, minlength=1).astype(np.int64)
        received = np.bincount(dm[crossing], weights=w, minlength=1).astype(np.int64)
        if storage_nodes is not None:
            self.add_extra_words(storage_nodes, storage_delta)
        return self._check_and_trace(label, sent, received)

    def execute_round_volumes(
        self,
        out_nodes: np.ndarray,
        out_words: np.ndarray,
        in_nodes: np.ndarray,
        in_words: np.ndarray,
        *,
        storage_nodes: np.ndarray | None = None,
        storage_delta=None,
        label: str = "",
    ) -> RoundTrace:
        """One round from pre-aggregated per-node traffic: node ``out_nodes[j]``
        sends ``out_words[j]`` words in total, node ``in_nodes[j]`` receives
        ``in_words[j]``.  Used when per-message arrays would be huge (ball
        gathers); same-machine elision is not applied, so ledgers are an upper
        bound on the true traffic."""
        out_nodes = np.asarray(out_nodes, np.int64)
        in_nodes = np.asarray(in_nodes, np.int64)
        ow = np.broadcast_to(np.asarray(out_words, np.int64), out_nodes.shape)
        iw = np.broadcast_to(np.asarray(in_words, np.int64), in_nodes.shape)
        sent = np.bincount(self.node_machine[out_nodes], weights=ow, minlength=1).astype(np.int64)
        received = np.bincount(self.node_machine[in_nodes], weights=iw, minlength=1).astype(
            np.int64
        )
        if storage_nodes is not None:
            self.add_extra_words(storage_nodes, storage_delta)
        return self._check_and_trace(label, sent, received)

    def control_rounds(self, count: int, words: int = 2, label: str = "control") -> None:
        """Meter coordinator plumbing (aggregation/broadcast trees): ``count``
        rounds in which every machine sends and receives at most ``words``.
        Uniform ledgers, so no per-machine arrays are materialized."""
        for _ in range(int(count)):
            peak_m, peak = self._loads_peak()
            trace = RoundTrace(
                round=self.round_idx,
                label=label,
                peak_words=peak,
                peak_machine=peak_m,
                max_sent=words,
                max_sent_machine=0,
                max_received=words,
                max_received_machine=0,
                total_sent=words * self.machines_used,
                total_received=words * self.machines_used,
            )
            if self.machines_used <= _TRACE_KEEP_LIMIT:
                trace.words_used = self.loads.copy()
                trace.sent = np.full(self.machines_used, words, np.int64)
                trace.received = np.full(self.machines_used, words, np.int64)
            self._finish_round(trace)

    def execute_round(self, local_step, label: str = "") -> RoundTrace:
        """Callback path: run ``local_step(MachineView) -> iterable of
        (dst_node, payload array)`` on every machine hosting nodes or holding
        mail, route the messages, deliver them to next round's inboxes."""
        by_machine: dict[int, MachineView] = {}
        hosting = np.flatnonzero(self.node_words() > 0)
        for v in hosting.tolist():
            m = int(self.node_machine[v])
            view = by_machine.get(m)
            if view is None:
                view = by_machine[m] = MachineView(m, [], {}, self.round_idx)
            view.nodes.append(v)
        for v, msgs in self._inbox.items():
            m = int(self.node_machine[v])
            view = by_machine.setdefault(
                m, MachineView(m, [], {}, self.round_idx)
            )
            view.inbox[v] = msgs
        sent = np.zeros(self.machines_used, np.int64)
        received = np.zeros(self.machines_used, np.int64)
        inbox_words = np.zeros(self.machines_used, np.int64)
        next_inbox: dict[int, list[tuple[int, np.ndarray]]] = {}
        for m in sorted(by_machine):
            view = by_machine[m]
            view.nodes = np.asarray(view.nodes, np.int64)
            out = local_step(view)
            if not out:
                continue
            items = out.items() if isinstance(out, dict) else out
            for dst, payload in items:
                payload = np.asarray(payload, np.int64)
                # the sending node is implicit: attribute to the machine
                cost = max(1, payload.size) * self.cfg.message_words
                dst_m = int(self.node_machine[dst])
                if dst_m != m:
                    sent[m] += cost
                    received[dst_m] += cost
                    inbox_words[dst_m] += cost
                next_inbox.setdefault(int(dst), []).append((m, payload))
        self._inbox = next_inbox
        return self._check_and_trace(label, sent, received, inbox_words=inbox_words)

    # -- tracing -------------------------------------------------------------

    def _record_rows(self, t: RoundTrace) -> None:
        if self._trace_rows is None:
            return
        if t.words_used is not None:
            active = np.flatnonzero((t.words_used > 0) | (t.sent > 0) | (t.received > 0))
            for m in active.tolist():
                self._trace_rows.append(
                    {
                        "round": t.round,
                        "machine": m,
                        "words_used": int(t.words_used[m]),
                        "sent": int(t.sent[m]),
                        "received": int(t.received[m]),
                    }
                )
        else:
            # machine -1 marks an aggregate row: per-machine ledgers are not
            # retained at this scale, only the maxima
            self._trace_rows.append(
                {
                    "round": t.round,
                    "machine": -1,
                    "words_used": t.peak_words,
                    "sent": t.max_sent,
                    "received": t.max_received,
                }
            )

    def flush_trace(self) -> Path | None:
        if self._trace_rows is None or self._trace_path is None:
            return None
        self._trace_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._trace_path, "w") as fh:
            for row in self._trace_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return self._trace_path


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------


def init_cluster(g: Graph, cfg: ClusterConfig, seed: int, name: str = "run") -> Cluster:
    """Place every node (with its whole adjacency) on a machine, heaviest
    first, no machine above max(heaviest node, twice the average load)."""
    cl = Cluster(g, cfg, seed, name=name)
    if g.n and int(g.max_degree()) * cfg.edge_words > cfg.S:
        raise CapacityError(
            f"node adjacency of {int(g.max_degree())} edge-words exceeds S={cfg.S}"
        )
    nodes = np.arange(g.n, dtype=np.int64)
    if g.n:
        mach = cl._place(nodes, cl.base_words, phase=0)
        cl._assign(nodes, mach, int(mach.max()) + 1)
        if int(cl.loads.max()) > cfg.S:
            raise CapacityError(
                f"initial placement cannot fit within S={cfg.S} words per machine"
            )
    return cl


def rebalance(
    cluster: Cluster,
    alive: np.ndarray,
    *,
    weights: np.ndarray | None = None,
    keep: np.ndarray | None = None,
    label: str = "rebalance",
) -> Cluster:
    """Repack alive nodes across machines and recompute the per-node budget
    floor(M*S/alive) capped at S.  Metered as one data round (the moves) plus
    an aggregation tree to compute the assignment.

    ``weights`` overrides the packing weights (e.g. predicted gather volume)
    without changing the stored-word ledgers.  ``keep`` marks extra nodes
    whose stored rows must survive and move with the repack even though they
    no longer count toward the budget (mid-partition, layered nodes retain
    their gathered balls until selection).
    """
    alive = np.asarray(alive, np.bool_)
    alive_n = int(alive.sum())
    cfg = cluster.cfg
    cluster.budget_per_node = min(cfg.S, (cfg.M * cfg.S) // max(1, alive_n))
    if alive_n == 0:
        return cluster
    hold = alive if keep is None else (alive | np.asarray(keep, np.bool_))
    dead = np.flatnonzero(~hold & (cluster.node_words() > 0))
    if dead.size:
        cluster.drop_nodes(dead)
    nodes = np.flatnonzero(hold)
    stored = cluster.node_words()[nodes]
    pack_w = stored if weights is None else np.asarray(weights, np.int64)[nodes]
    old_mach = cluster.node_machine[nodes].copy()
    mach = cluster._place(nodes, pack_w, phase=cluster.round_idx + 1)
    moved = mach != old_mach
    moved_w = stored[moved]
    sent = np.bincount(old_mach[moved], weights=moved_w, minlength=1).astype(np.int64)
    cluster._assign(nodes, mach, int(mach.max()) + 1)
    received = np.bincount(mach[moved], weights=moved_w, minlength=1).astype(np.int64)
    cluster.control_rounds(cluster.agg_depth(), label=label + "-plan")
    cluster._check_and_trace(label, sent, received)
    return cluster


def metrics(cluster: Cluster) -> dict:
    """Read-only aggregation of the round traces."""
    traces = cluster.traces
    by_label: dict[str, int] = {}
    for t in traces:
        key = t.label or "round"
        by_label[key] = by_label.get(key, 0) + 1
    return {
        "rounds": len(traces),
        "normalized_rounds": len(traces) * cluster.cfg.delta,
        "peak_words": max((t.peak_words for t in traces), default=0),
        "max_sent": max((t.max_sent for t in traces), default=0),
        "max_received": max((t.max_received for t in traces), default=0),
        "total_messages": sum(t.total_sent for t in traces),
        "violations": list(cluster.violations),
        "rounds_by_label": dict(sorted(by_label.items())),
        "S": cluster.cfg.S,
        "M": cluster.cfg.M,
        "machines_used": cluster.machines_used,
        "c_total": cluster.cfg.c_total,
        "budget_per_node": cluster.budget_per_node,
    }
