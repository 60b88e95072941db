"""Aggregation-primitive kernels, vertex-cut partitioning and a simulated
distributed full-batch GraphSAGE trainer."""
from .graph import (ALL_SPECS, BINARY_OPS, REDUCE_OPS, CsrGraph, GraphError, OperatorSpec,
                    ap_reference, build_csr, in_degrees, transpose)
from .kernel import BACKEND, BlockPlan, SchedSpec, ap_blocked, plan_blocks
from .kernel.traffic import estimate_traffic, sweep_blocks
from .partition import (build_split_trees, build_vertex_map, libra_partition, partition_stats,
                        replication_factor)
from .estimators import estimate_memory, estimate_work

__version__ = "0.1.0"
