"""Cache-blocked aggregation primitive.

Two interchangeable backends run the per-block pass:

``cython``
    compiled OpenMP kernel (``_ckernel``), used when the extension was built.
``python``
    numpy implementation in ``_fallback``.

Set ``AGGFORGE_BACKEND=python`` to force the fallback. Both backends fold each
row's block-local neighbours into a row accumulator in CSR order, blocks in
ascending order, so results do not depend on the backend, worker count or
chunk size.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..graph import (
    BINARY_CODES,
    REDUCE_CODES,
    CsrGraph,
    GraphError,
    OperatorSpec,
    check_inputs,
    in_degrees,
    reduce_identity,
)
from . import _fallback

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

__all__ = [
    "BACKEND",
    "BlockPlan",
    "SchedSpec",
    "ap_blocked",
    "available_backends",
    "default_block_size",
    "plan_blocks",
]


def available_backends() -> list[str]:
    return (["cython"] if _ckernel is not None else []) + ["python"]


def _pick_backend() -> str:
    want = os.environ.get("AGGFORGE_BACKEND", "").strip().lower()
    if want == "python" or _ckernel is None:
        return "python"
    return "cython"


BACKEND = _pick_backend()


def _default_workers() -> int:
    return max(1, int(os.environ.get("AGGFORGE_WORKERS", "1")))


@dataclass(frozen=True)
class SchedSpec:
    """Dynamic scheduling: workers claim ``chunk`` contiguous destination rows at a time."""
    workers: int = field(default_factory=_default_workers)
    chunk: int = 64

    def __post_init__(self):
        if self.workers < 1 or self.chunk < 1:
            raise ValueError("workers and chunk must both be >= 1")


@dataclass(frozen=True)
class BlockPlan:
    graph: CsrGraph
    B: int
    blocks: tuple

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def source_range(self, i: int) -> tuple[int, int]:
        return i * self.B, min((i + 1) * self.B, self.graph.num_vertices)


def plan_blocks(g: CsrGraph, B: int) -> BlockPlan:
    """Split ``g`` into ``ceil(|V|/B)`` CSR matrices by source-vertex range.

    Every block keeps all destination rows; block ``i`` holds the edges whose
    source lies in ``[i*B, (i+1)*B)``, in their original row order.
    """
    if B < 1:
        raise ValueError("block size must be >= 1")
    n = g.num_vertices
    n_b = max(1, math.ceil(n / B)) if n else 1
    dst = g.destinations()
    blk = g.col_idx // B
    # CSR slots are already destination-sorted; a stable sort on block id keeps row order
    order = np.argsort(blk, kind="stable")
    bounds = np.searchsorted(blk[order], np.arange(n_b + 1))
    blocks = []
    for i in range(n_b):
        sl = order[bounds[i]:bounds[i + 1]]
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst[sl], minlength=n), out=row_ptr[1:])
        blocks.append(CsrGraph(n, row_ptr, g.col_idx[sl], g.edge_id[sl]))
    return BlockPlan(g, int(B), tuple(blocks))


def default_block_size(d: int, elem_bytes: int, cache_bytes: int) -> int:
    """Largest B whose fV block fills at most half of ``cache_bytes``."""
    return max(1, (cache_bytes // 2) // max(1, d * elem_bytes))


def ap_blocked(plan: BlockPlan, fV: Optional[np.ndarray], fE: Optional[np.ndarray],
               spec: OperatorSpec, sched: Optional[SchedSpec] = None,
               backend: Optional[str] = None) -> np.ndarray:
    """Blocked aggregation; same contract and output as ``ap_reference``."""
    g = plan.graph
    dtype, d = check_inputs(g, fV, fE, spec)
    sched = sched or SchedSpec()
    backend = backend or BACKEND
    if backend not in available_backends():
        raise GraphError(f"backend {backend!r} unavailable (have {available_backends()})")
    out = np.full((g.num_vertices, d), reduce_identity(spec.reduce, dtype), dtype=dtype)
    if spec.uses_vertex:
        fV = np.ascontiguousarray(fV)
    if spec.uses_edge:
        fE = np.ascontiguousarray(fE)
    if backend == "cython":
        dummy = np.zeros((1, d), dtype=dtype)
        vv = fV if spec.uses_vertex else dummy
        ee = fE if spec.uses_edge else dummy
        bop, rop = BINARY_CODES[spec.binary], REDUCE_CODES[spec.reduce]
        for blk in plan.blocks:
            if blk.num_edges:
                _ckernel.block_pass(blk.row_ptr, blk.col_idx, blk.edge_id, vv, ee, out,
                                    bop, rop, sched.chunk, sched.workers)
    elif g.num_edges:
        _fallback.plan_pass(plan, fV, fE, out, spec, sched)
    out[in_degrees(g) == 0] = 0
    return out
