"""Analytic memory-traffic model for the blocked aggregation primitive.

Per block ``i`` let ``S`` be the distinct active sources, ``D`` the distinct
touched destinations and ``nnz`` its edge count. fV rows of a block are read
once if the block's active rows fit in ``fv_share`` of the cache (all of it by
default), and once per edge otherwise (thrash). Each block pass reads and writes every touched
fO row. fE is streamed once.

This is a proxy for hardware counters, not a calibrated predictor.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np

from ..graph import CsrGraph, OperatorSpec
from . import BlockPlan, SchedSpec, ap_blocked, plan_blocks

# fraction of the cache the fV block may fill before it thrashes; 1.0 tests the
# block against the whole cache, lower values reserve room for fO/fE/index lines
FV_CACHE_SHARE = 1.0

CSV_HEADER = ("n_B", "bytes_read_fV", "bytes_rw_fO", "bytes_read_fE", "total_io", "reuse_fV", "wall_time_ns")


@dataclass(frozen=True)
class TrafficReport:
    bytes_read_fV: int
    bytes_rw_fO: int
    bytes_read_fE: int
    total_io: int
    reuse_fV: float


def block_footprint(plan: BlockPlan) -> list[tuple[int, int, int]]:
    """``(active sources, touched destinations, nnz)`` for every block."""
    out = []
    for blk in plan.blocks:
        nnz = blk.num_edges
        if not nnz:
            out.append((0, 0, 0))
            continue
        s = np.unique(blk.col_idx).size
        dcount = int(np.count_nonzero(np.diff(blk.row_ptr)))
        out.append((s, dcount, nnz))
    return out


def estimate_traffic(plan: BlockPlan, d: int, elem_bytes: int, cache_bytes: int,
                     uses_fE: bool = False, fv_share: float = FV_CACHE_SHARE) -> TrafficReport:
    row = d * elem_bytes
    capacity = cache_bytes * fv_share
    fv = fo = total_nnz = 0
    for s, dcount, nnz in block_footprint(plan):
        total_nnz += nnz
        fv += s * row if s * row <= capacity else nnz * row
        fo += 2 * dcount * row
    fe = total_nnz * row if uses_fE else 0
    reuse = (total_nnz * row) / fv if fv else 1.0
    return TrafficReport(fv, fo, fe, fv + fo + fe, reuse)


@dataclass(frozen=True)
class SweepRow:
    n_B: int
    traffic: TrafficReport
    wall_time_ns: int

    def as_csv_row(self) -> list:
        t = asdict(self.traffic)
        return [self.n_B] + [t[k] for k in CSV_HEADER[1:6]] + [self.wall_time_ns]


def sweep_blocks(g: CsrGraph, fV: np.ndarray, spec: OperatorSpec, sizes: Iterable[int],
                 cache_bytes: int, fE: Optional[np.ndarray] = None,
                 sched: Optional[SchedSpec] = None, time_kernel: bool = True) -> list[SweepRow]:
    """Model and time the blocked kernel for each block size in ``sizes``.

    Rows come back in ascending ``n_B``.
    """
    sizes = list(sizes)
    if not sizes:
        raise ValueError("sizes must not be empty")
    ref = fV if fV is not None else fE
    d, elem = ref.shape[1], ref.dtype.itemsize
    rows = []
    for B in sizes:
        plan = plan_blocks(g, B)
        rep = estimate_traffic(plan, d, elem, cache_bytes, spec.uses_edge)
        wall = 0
        if time_kernel:
            t0 = time.perf_counter_ns()
            ap_blocked(plan, fV, fE, spec, sched)
            wall = time.perf_counter_ns() - t0
        rows.append(SweepRow(plan.n_blocks, rep, wall))
    rows.sort(key=lambda r: r.n_B)
    return rows


def sweep_to_csv(rows: Iterable[SweepRow], extra: Iterable[list] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.as_csv_row())
    for r in extra:
        w.writerow(r)
    return buf.getvalue()
