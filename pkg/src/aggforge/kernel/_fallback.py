"""Pure numpy block pass.

The destination rows' neighbour lists are walked in
lock-step: step ``p`` folds the ``p``-th neighbour of every row that has one.
That vectorises across rows while keeping each row's fold order identical to
the compiled kernel.

numpy gains nothing from source blocking, so ``plan_pass`` first merges the
blocks into one CSR whose rows list block 0's neighbours, then block 1's, and
so on. A single sweep over it folds every row in exactly the blocked order.
"""
from __future__ import annotations

import numpy as np

from ..graph import REDUCE_UFUNCS, CsrGraph, combine


def _chunk_pass(blk, fV, fE, out, spec, lo, hi):
    start = blk.row_ptr[lo:hi]
    deg = blk.row_ptr[lo + 1:hi + 1] - start
    order = np.argsort(-deg, kind="stable")
    deg_sorted = deg[order]
    n_active = int(np.count_nonzero(deg_sorted))
    if not n_active:
        return
    rows = order[:n_active] + lo
    start = start[order[:n_active]]
    deg_sorted = deg_sorted[:n_active]
    red = REDUCE_UFUNCS[spec.reduce]
    acc = out[rows]
    for p, m in enumerate(_rows_with_more(deg_sorted)):
        slot = start[:m] + p
        x = fV[blk.col_idx[slot]] if spec.uses_vertex else None
        y = fE[blk.edge_id[slot]] if spec.uses_edge else None
        red(acc[:m], combine(spec, x, y), out=acc[:m])
    out[rows] = acc


def _rows_with_more(deg_desc: np.ndarray) -> np.ndarray:
    """For descending degrees, ``result[p]`` = number of rows with degree > p."""
    maxdeg = int(deg_desc[0])
    hist = np.bincount(deg_desc, minlength=maxdeg + 1)
    # rows with degree > p = total - rows with degree <= p
    return len(deg_desc) - np.cumsum(hist)[:maxdeg]


def merge_blocks(plan) -> CsrGraph:
    """One CSR holding each row's slots in (block, in-block position) order."""
    if len(plan.blocks) == 1:
        return plan.blocks[0]
    dst = np.concatenate([b.destinations() for b in plan.blocks])
    order = np.argsort(dst, kind="stable")    # blocks were concatenated in order
    col = np.concatenate([b.col_idx for b in plan.blocks])[order]
    eid = np.concatenate([b.edge_id for b in plan.blocks])[order]
    return CsrGraph(plan.graph.num_vertices, plan.graph.row_ptr, col, eid)


def plan_pass(plan, fV, fE, out, spec, sched) -> None:
    block_pass(merge_blocks(plan), fV, fE, out, spec, sched)


def block_pass(blk, fV, fE, out, spec, sched=None) -> None:
    # one lock-step sweep over every row; rows are independent, so chunking
    # would not change the result, and threads gain nothing under the GIL
    if blk.num_vertices:
        _chunk_pass(blk, fV, fE, out, spec, 0, blk.num_vertices)
