"""Batch peeling into layers, degeneracy ordering, and edge orientation.

The layer structure ("peel everything with remaining degree <= d, repeat")
is the backbone of the whole reduction pipeline: it gives each node at most
``d`` neighbors in its own or higher layers, which is what makes the
mark-and-propose stages effective.  Peeling with threshold ``d`` has a unique
fixed point, so the result is deterministic regardless of tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .kernels import degeneracy_order, peel_layers


class StallError(RuntimeError):
    """Peeling cannot make progress: every remaining node has degree > d."""


@dataclass(frozen=True)
class HPartition:
    layer: np.ndarray  # (n,) int64, 1-based layer index
    d: int
    ell: int  # number of nonempty layers == max(layer)

    def layer_sizes(self) -> np.ndarray:
        """sizes[i] = |layer i+1| for i in 0..ell-1."""
        return np.bincount(self.layer, minlength=self.ell + 1)[1:]

    def suffix_sizes(self) -> np.ndarray:
        """suffix[i] = number of nodes in layers >= i+1."""
        return np.cumsum(self.layer_sizes()[::-1])[::-1]


def h_partition(g: Graph, d: int) -> HPartition:
    """Partition nodes into peeling layers with degree threshold ``d``.

    Layer 1 holds every node of degree <= d; removing it, layer 2 holds every
    node whose remaining degree is <= d; and so on.  Raises :class:`StallError`
    if at some point no remaining node qualifies (all remaining degrees > d),
    which cannot happen when d exceeds twice the graph's degeneracy.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    alive = np.ones(g.n, dtype=np.bool_)
    layer, ell = peel_layers(g.indptr, g.indices, alive, d, max_layers=max(g.n, 1))
    if (layer == 0).any():
        stuck = int((layer == 0).sum())
        raise StallError(f"peeling stalled with {stuck} nodes of remaining degree > {d}")
    return HPartition(layer=layer, d=int(d), ell=int(ell))


def orientation_of(hp: HPartition, g: Graph, v: int):
    """Split adj(v) by layer: (outgoing, incoming, unoriented).

    Outgoing neighbors sit in strictly higher layers (v is their child),
    incoming in strictly lower, unoriented in the same layer.
    """
    nb = g.neighbors(v)
    lv = hp.layer[v]
    ln = hp.layer[nb]
    return list(nb[ln > lv]), list(nb[ln < lv]), list(nb[ln == lv])


@dataclass(frozen=True)
class ArboricityEstimate:
    degeneracy: int
    lambda_lower: int  # ceil(degeneracy / 2)
    lambda_upper: int  # degeneracy itself
    witness: np.ndarray  # removal order: each node has <= degeneracy later neighbors


def degeneracy(g: Graph) -> ArboricityEstimate:
    """Exact degeneracy with a witness elimination order.

    The degeneracy k sandwiches the arboricity: ceil(k/2) <= arboricity <= k,
    which is all the pipeline needs (its guarantees are stated against 2λ).
    """
    k, order, _core = degeneracy_order(g.indptr, g.indices)
    return ArboricityEstimate(
        degeneracy=int(k),
        lambda_lower=(int(k) + 1) // 2,
        lambda_upper=int(k),
        witness=order,
    )


def layer_decay_ok(hp: HPartition, lam: int) -> bool:
    """Check |layers >= i+1| <= (2·lam/d) · |layers >= i| for all i >= 1.

    This is the geometric-decay law the partition obeys whenever d > 2·lam
    (lam standing in for the arboricity via the degeneracy bound).
    """
    suf = hp.suffix_sizes().astype(np.float64)
    if suf.size <= 1:
        return True
    ratio = 2.0 * lam / hp.d
    return bool((suf[1:] <= ratio * suf[:-1] + 1e-9).all())
