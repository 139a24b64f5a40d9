"""Degree-reduction pipelines for sparse graphs, centralized and on a metered
cluster simulator.

The package solves maximal matching and maximal independent set on uniformly
sparse (low-arboricity) graphs by repeatedly layering the graph with batch
peeling, running one randomized mark/propose/select round over the layering,
and finishing the residual low-degree graph greedily.  The same computation
runs two ways: directly (:func:`sparsempc.reduction.solve`) or on a simulated
memory-bounded cluster (:func:`sparsempc.mpc.mpc_pipeline`) that meters every
round, message, and stored word — with bit-identical outputs.
"""

from .graph import Graph, GraphView, build_graph, load_graph, save_graph
from .generators import FAMILIES, generate
from .peeling import (
    ArboricityEstimate,
    HPartition,
    StallError,
    degeneracy,
    h_partition,
    layer_decay_ok,
    orientation_of,
)
from .reduction import (
    InvariantError,
    PartialSolution,
    ReductionReport,
    arboricity_schedule,
    degree_reduce,
    finish_greedy,
    solution_digest,
    solution_to_json,
    solve,
    verify_maximal,
)
from .runtime import (
    BudgetError,
    CapacityError,
    Cluster,
    ClusterConfig,
    MemoryExceeded,
    ReceiveBudgetExceeded,
    SendBudgetExceeded,
    init_cluster,
    metrics,
    rebalance,
)
from .mpc import (
    Chunk,
    ChunkIndex,
    ExponentiationSchedule,
    compute_schedule,
    load_pipeline_config,
    mpc_h_partition,
    mpc_pipeline,
)
from .harness import ExperimentSpec, RunRecord, derive_2approx, report, run

__version__ = "0.1.0"

__all__ = [
    "ArboricityEstimate",
    "BudgetError",
    "CapacityError",
    "Chunk",
    "ChunkIndex",
    "Cluster",
    "ClusterConfig",
    "ExperimentSpec",
    "ExponentiationSchedule",
    "FAMILIES",
    "Graph",
    "GraphView",
    "HPartition",
    "InvariantError",
    "MemoryExceeded",
    "PartialSolution",
    "ReceiveBudgetExceeded",
    "ReductionReport",
    "RunRecord",
    "SendBudgetExceeded",
    "StallError",
    "arboricity_schedule",
    "build_graph",
    "compute_schedule",
    "degeneracy",
    "degree_reduce",
    "derive_2approx",
    "finish_greedy",
    "generate",
    "h_partition",
    "init_cluster",
    "layer_decay_ok",
    "load_graph",
    "load_pipeline_config",
    "metrics",
    "mpc_h_partition",
    "mpc_pipeline",
    "orientation_of",
    "rebalance",
    "report",
    "run",
    "save_graph",
    "solution_digest",
    "solution_to_json",
    "solve",
    "verify_maximal",
]
