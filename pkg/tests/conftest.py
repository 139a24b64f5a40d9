"""Shared corpora.

Instances are described as specs (family, params, seed) and realized on
demand, so the big corpus never sits in memory all at once.  Per-instance
memory exponents are floored so the maximum degree always fits into one
machine (the model rejects Delta > S at init).
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from sparsempc import generators
from sparsempc.peeling import degeneracy


def _grid_side(n: int) -> int:
    return max(2, int(round(math.sqrt(n))))


def corpus_specs(count_per_family: int = 50, n_lo: int = 100, n_hi: int = 100_000):
    """The four-family mixed corpus (trees, grids, preferential attachment,
    bounded-degree random), sizes log-spaced in [n_lo, n_hi]."""
    sizes = np.unique(np.logspace(math.log10(n_lo), math.log10(n_hi), count_per_family).astype(int))
    specs = []
    for i, n in enumerate(sizes):
        n = int(n)
        specs.append({"family": "tree", "params": {"n": n}, "seed": i})
        side = _grid_side(n)
        specs.append({"family": "grid", "params": {"rows": side, "cols": side}, "seed": i})
        specs.append({"family": "preferential-attachment", "params": {"n": n, "c": 3}, "seed": i})
        specs.append({"family": "bounded-degree-random", "params": {"n": n, "deg": 4}, "seed": i})
    return specs


def realize(spec: dict):
    return generators.generate(spec["family"], spec["params"], seed=spec["seed"])


def fitting_delta(g, base: float) -> float:
    """Smallest exponent >= base whose machine capacity holds the worst row."""
    need = math.log(max(2, g.max_degree() + 1)) / math.log(max(2, g.n))
    return min(0.95, max(base, need + 0.02))


def valid_d(g) -> int:
    """A peeling threshold that can never stall: d > 2 * degeneracy."""
    return 2 * degeneracy(g).degeneracy + 1


@pytest.fixture(scope="session")
def partition_corpus():
    """200 instances for the partition-equality and layer-decay checks."""
    specs = corpus_specs(50)
    assert len(specs) == 200
    return specs


@pytest.fixture(scope="session")
def pipeline_corpus():
    """Small instances cheap enough for 50-seed sweeps of the full pipeline."""
    return [
        {"family": "tree", "params": {"n": 150}, "seed": 0, "delta": 0.5},
        {"family": "tree", "params": {"n": 400}, "seed": 1, "delta": 0.6},
        {"family": "grid", "params": {"rows": 12, "cols": 13}, "seed": 2, "delta": 0.5},
        {"family": "preferential-attachment", "params": {"n": 250, "c": 2}, "seed": 3, "delta": 0.8},
        {"family": "bounded-degree-random", "params": {"n": 300, "deg": 4}, "seed": 4, "delta": 0.5},
        {"family": "layered-core", "params": {"n": 900, "depth": 80, "d": 3}, "seed": 5, "delta": 0.8},
    ]
