"""Delayed remote partial aggregates on an in-process simulated cluster.

Each partition is a rank. A rank aggregates over its own edges, then the
clones of every split vertex are synchronised through a one-level tree:
leaves send partial aggregates to the root, the root reduces them and sends
the result back, and leaves overwrite their rows with it.

Algorithms:

``0c``    local aggregation only, no messages.
``cd-0``  full leaf->root->leaf synchronisation every epoch, delivered within
          the epoch.
``cd-r``  trees are split into ``r`` bins; bin ``e % r`` starts its exchange at
          epoch ``e`` and each hop is consumed ``r`` epochs after it was sent.
          ``r = 0`` is ``cd-0``.

Ranks share nothing mutable. All cross-rank data moves through mailboxes
filled by ``alltoall``; with ``threaded=True`` every per-rank phase runs on a
thread pool with a barrier between phases, and results are bitwise identical
to the round-robin mode.
"""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .graph import CsrGraph, OperatorSpec, REDUCE_UFUNCS, in_degrees, reduce_identity
from .kernel import SchedSpec, ap_blocked, plan_blocks
from .partition import PartitionSet, SplitForest, VertexMap

ALGOS = ("0c", "cd-0", "cd-r")
SUM = OperatorSpec("copylhs", "sum")


class DrpaError(RuntimeError):
    pass


class MsgKind(str, Enum):
    LEAF_TO_ROOT = "LeafToRoot"
    ROOT_TO_LEAF = "RootToLeaf"


@dataclass(frozen=True)
class AggMessage:
    src_rank: int
    dst_rank: int
    kind: MsgKind
    layer: int
    send_epoch: int
    tree_ids: np.ndarray     # ascending
    values: np.ndarray       # (len(tree_ids), d)

    def __post_init__(self):
        if self.src_rank == self.dst_rank:
            raise DrpaError("message source and destination rank coincide")
        if self.values.shape[0] != len(self.tree_ids):
            raise DrpaError("payload length mismatch")

    @property
    def payload(self) -> list[tuple[int, np.ndarray]]:
        return list(zip(self.tree_ids.tolist(), self.values))

    @property
    def elements(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class DrpaSchedule:
    r: int
    bins: tuple      # ((start, stop), ...) half-open tree-index ranges

    def bin_for_epoch(self, epoch: int) -> tuple[int, int]:
        return self.bins[epoch % self.r] if self.r else self.bins[0]

    def bin_sizes(self) -> list[int]:
        return [b - a for a, b in self.bins]


def make_schedule(forest, r: int) -> DrpaSchedule:
    """Bin the split trees for delay ``r``.

    ``forest`` may be a ``SplitForest`` or a tree count. With ``n`` trees,
    bin ``i`` holds trees ``[i*(n//r), (i+1)*(n//r))``; the ``n % r`` left
    over go to the last bin.
    """
    n = forest if isinstance(forest, int) else len(forest)
    if r < 0:
        raise ValueError("delay r must be >= 0")
    if r == 0:
        return DrpaSchedule(0, ((0, n),))
    k = n // r
    bins = [(i * k, (i + 1) * k) for i in range(r)]
    bins[-1] = (bins[-1][0], n)
    return DrpaSchedule(r, tuple(bins))


@dataclass(frozen=True)
class ClusterConfig:
    k: int
    algo: str = "cd-0"
    r: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.r < 0 or self.k < 1:
            raise ValueError("need k >= 1 and r >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "ClusterConfig":
        return cls(**json.loads(text))


class RankState:
    """Everything one rank owns: its subgraph, clone/tree tables and mailboxes."""

    def __init__(self, rank: int, graph: CsrGraph, l2g: np.ndarray, global_deg: np.ndarray,
                 n_trees: int, block_size: Optional[int] = None):
        self.rank = rank
        self.graph = graph
        self.l2g = l2g
        self.local_deg = in_degrees(graph)
        self.global_deg = global_deg
        self.plan = plan_blocks(graph, block_size or max(1, graph.num_vertices))
        self._plan_t = None
        # tree id -> row, -1 where this rank holds no such clone
        self.root_row = np.full(n_trees, -1, dtype=np.int64)
        self.leaf_row = np.full(n_trees, -1, dtype=np.int64)
        # leaf side: trees sorted ascending with the root's rank
        self.leaf_trees = np.empty(0, dtype=np.int64)
        self.leaf_root_rank = np.empty(0, dtype=np.int64)
        # root side: one entry per (tree, leaf), sorted by tree
        self.root_trees = np.empty(0, dtype=np.int64)
        self.root_leaf_rank = np.empty(0, dtype=np.int64)
        self.mailboxes: dict[tuple, list[AggMessage]] = defaultdict(list)

    @property
    def num_rows(self) -> int:
        return self.graph.num_vertices

    @property
    def plan_t(self):
        if self._plan_t is None:
            from .graph import transpose
            self._plan_t = plan_blocks(transpose(self.graph), self.plan.B)
        return self._plan_t

    def drain(self, kind: MsgKind, layer: int, epoch: int) -> list[AggMessage]:
        msgs = self.mailboxes.pop((kind, layer, epoch), [])
        return sorted(msgs, key=lambda m: m.src_rank)


class Cluster:
    """Simulated cluster: one ``RankState`` per partition plus collectives.

    Isolated vertices (absent from every partition) are attached as edge-less
    rows to rank ``gid % k`` so that whole-graph training sees every vertex.
    """

    def __init__(self, ps: PartitionSet, vm: VertexMap, forest: SplitForest,
                 config: Optional[ClusterConfig] = None, *, sched: Optional[SchedSpec] = None,
                 block_size: Optional[int] = None, threaded: bool = False, trace: bool = False):
        self.config = config or ClusterConfig(ps.k)
        if self.config.k != ps.k:
            raise DrpaError("config k differs from partition count")
        self.k = ps.k
        self.forest = forest
        self.n_trees = len(forest)
        self.num_vertices = ps.num_vertices
        self.schedule = make_schedule(self.n_trees, self.config.r if self.config.algo == "cd-r" else 0)
        self.sched = sched or SchedSpec(workers=1)
        self.threaded = threaded
        self.trace_enabled = trace
        self.trace: list[dict] = []
        self.counters: dict[tuple, list[int]] = defaultdict(lambda: [0, 0])
        self._passes: set = set()
        self._last_epoch: dict[int, int] = {}

        gdeg = np.zeros(ps.num_vertices, dtype=np.int64)
        for part in ps.parts:
            np.add.at(gdeg, part.vertices, in_degrees(part.graph))
        self.global_in_degree = gdeg

        present = ps.presence_counts() > 0
        orphans = np.flatnonzero(~present)
        self.ranks: list[RankState] = []
        for part in ps.parts:
            extra = orphans[orphans % self.k == part.index]
            n = len(part.vertices) + len(extra)
            rp = np.concatenate([part.graph.row_ptr, np.full(len(extra), part.graph.num_edges)])
            g = CsrGraph(n, rp, part.graph.col_idx, part.graph.edge_id)
            l2g = np.concatenate([part.vertices, extra]).astype(np.int64)
            self.ranks.append(RankState(part.index, g, l2g, gdeg[l2g], self.n_trees, block_size))

        where = {}
        for t, tree in enumerate(forest.trees):
            p = vm.partition_of(tree.root)
            row = tree.root - vm.ranges[p][0]
            self.ranks[p].root_row[t] = row
            where[t] = p
        leaf_side = defaultdict(list)
        root_side = defaultdict(list)
        for t, tree in enumerate(forest.trees):
            rp = where[t]
            for leaf in tree.leaves:
                lp = vm.partition_of(leaf)
                self.ranks[lp].leaf_row[t] = leaf - vm.ranges[lp][0]
                leaf_side[lp].append((t, rp))
                root_side[rp].append((t, lp))
        for rk in self.ranks:
            if leaf_side[rk.rank]:
                a = np.asarray(leaf_side[rk.rank], dtype=np.int64)
                rk.leaf_trees, rk.leaf_root_rank = a[:, 0], a[:, 1]
            if root_side[rk.rank]:
                a = np.asarray(root_side[rk.rank], dtype=np.int64)
                rk.root_trees, rk.root_leaf_rank = a[:, 0], a[:, 1]

    # -- helpers ---------------------------------------------------------
    def map_ranks(self, fn, *per_rank_args):
        """Run ``fn(rank, *args_for_rank)`` on every rank; the call is a barrier."""
        jobs = [(rk,) + tuple(a[rk.rank] for a in per_rank_args) for rk in self.ranks]
        if self.threaded and self.k > 1:
            with ThreadPoolExecutor(max_workers=self.k) as pool:
                return list(pool.map(lambda j: fn(*j), jobs))
        return [fn(*j) for j in jobs]

    def scatter_features(self, x: np.ndarray) -> list[np.ndarray]:
        """Global feature matrix -> per-rank clone rows."""
        return [np.ascontiguousarray(x[rk.l2g]) for rk in self.ranks]

    def leaves_in_bin(self, start: int, stop: int) -> int:
        return int(sum(np.count_nonzero((rk.leaf_trees >= start) & (rk.leaf_trees < stop))
                       for rk in self.ranks))

    def _count(self, epoch, rank, layer, kind, sent=0, received=0):
        c = self.counters[(epoch, rank, layer, kind.value)]
        c[0] += sent
        c[1] += received


# -- per-rank operations ---------------------------------------------------

def local_aggregate(rank: RankState, feats: np.ndarray, spec: OperatorSpec,
                    sched: Optional[SchedSpec] = None) -> np.ndarray:
    return ap_blocked(rank.plan, feats, None, spec, sched)


def _bin_slice(trees: np.ndarray, bin_: tuple[int, int]) -> slice:
    lo, hi = np.searchsorted(trees, bin_)
    return slice(int(lo), int(hi))


def _empty_as_identity(rank: RankState, rows: np.ndarray, vals: np.ndarray, spec: OperatorSpec):
    # a clone without local in-edges holds 0 only by convention; for max/min it
    # must not take part in the reduction, so it travels as the identity
    if spec.reduce != "sum":
        empty = rank.local_deg[rows] == 0
        if empty.any():
            vals[empty] = reduce_identity(spec.reduce, vals.dtype)
    return vals


def gather_leaves(rank: RankState, bin_: tuple[int, int], layer: int, epoch: int,
                  agg: np.ndarray, spec: OperatorSpec = SUM) -> list[AggMessage]:
    """Partial aggregates of this rank's leaf clones in ``bin_``, one message per root rank."""
    sl = _bin_slice(rank.leaf_trees, bin_)
    trees = rank.leaf_trees[sl]
    dst = rank.leaf_root_rank[sl]
    out = []
    for r in np.unique(dst).tolist():
        t = trees[dst == r]
        rows = rank.leaf_row[t]
        vals = _empty_as_identity(rank, rows, agg[rows].copy(), spec)
        out.append(AggMessage(rank.rank, r, MsgKind.LEAF_TO_ROOT, layer, epoch, t, vals))
    return out


def scatter_reduce_roots(rank: RankState, delivered: Sequence[AggMessage], agg: np.ndarray,
                         spec: OperatorSpec = SUM) -> None:
    """Reduce delivered leaf partials into this rank's root rows, in (src, tree) order."""
    if not delivered:
        return
    red = REDUCE_UFUNCS[spec.reduce]
    touched = []
    for msg in delivered:
        rows = rank.root_row[msg.tree_ids]
        if np.any(rows < 0):
            bad = msg.tree_ids[rows < 0][0]
            raise DrpaError(f"rank {rank.rank} is not the root of tree {bad}")
        touched.append(rows)
    if spec.reduce != "sum":
        rows = np.unique(np.concatenate(touched))
        agg[rows] = _empty_as_identity(rank, rows, agg[rows], spec)
    for msg, rows in zip(delivered, touched):
        agg[rows] = red(agg[rows], msg.values)
    if spec.reduce != "sum":
        rows = np.unique(np.concatenate(touched))
        agg[rows[rank.global_deg[rows] == 0]] = 0


def gather_roots(rank: RankState, bin_: tuple[int, int], layer: int, epoch: int,
                 agg: np.ndarray) -> list[AggMessage]:
    """Final root aggregates for every leaf of this rank's roots in ``bin_``."""
    sl = _bin_slice(rank.root_trees, bin_)
    trees = rank.root_trees[sl]
    dst = rank.root_leaf_rank[sl]
    out = []
    for r in np.unique(dst).tolist():
        t = trees[dst == r]
        out.append(AggMessage(rank.rank, r, MsgKind.ROOT_TO_LEAF, layer, epoch, t,
                              agg[rank.root_row[t]].copy()))
    return out


def scatter_leaves(rank: RankState, delivered: Sequence[AggMessage], agg: np.ndarray) -> None:
    """Overwrite leaf rows with the root aggregates."""
    for msg in delivered:
        rows = rank.leaf_row[msg.tree_ids]
        if np.any(rows < 0):
            bad = msg.tree_ids[rows < 0][0]
            raise DrpaError(f"rank {rank.rank} holds no leaf of tree {bad}")
        agg[rows] = msg.values


# -- collectives -----------------------------------------------------------

def alltoall(cluster: Cluster, messages: Sequence[Sequence[AggMessage]], deliver_epoch: int) -> None:
    """Enqueue every message in its destination mailbox for ``deliver_epoch``."""
    for batch in messages:
        for m in batch:
            if not 0 <= m.dst_rank < cluster.k:
                raise DrpaError(f"destination rank {m.dst_rank} out of range")
            cluster.ranks[m.dst_rank].mailboxes[(m.kind, m.layer, deliver_epoch)].append(m)
            cluster._count(m.send_epoch, m.src_rank, m.layer, m.kind, sent=m.elements)


def allreduce(cluster: Cluster, vectors: Sequence[np.ndarray], op: str = "sum") -> list[np.ndarray]:
    """Rank-ordered sum; every rank gets its own copy of the result."""
    if op != "sum":
        raise ValueError("only sum is supported")
    if len(vectors) != cluster.k:
        raise DrpaError("need exactly one vector per rank")
    shapes = {np.shape(v) for v in vectors}
    if len(shapes) != 1:
        raise DrpaError(f"allreduce length mismatch: {sorted(shapes)}")
    acc = np.array(vectors[0], copy=True)
    for v in vectors[1:]:
        acc = acc + v
    return [acc.copy() for _ in range(cluster.k)]


def _consume(cluster: Cluster, kind: MsgKind, layer: int, epoch: int) -> list[list[AggMessage]]:
    out = []
    for rk in cluster.ranks:
        msgs = rk.drain(kind, layer, epoch)
        for m in msgs:
            cluster._count(epoch, rk.rank, layer, kind, received=m.elements)
            if cluster.trace_enabled:
                cluster.trace.append({
                    "kind": kind.value, "layer": layer, "rank": rk.rank, "src": m.src_rank,
                    "trees": m.tree_ids.tolist(), "send_epoch": m.send_epoch, "consume_epoch": epoch,
                })
        out.append(msgs)
    return out


# -- epoch driver ----------------------------------------------------------

def remote_sync(cluster: Cluster, algo: str, epoch: int, layer: int, aggs: list[np.ndarray],
                spec: OperatorSpec = SUM) -> list[np.ndarray]:
    """Synchronise split-vertex rows of ``aggs`` in place according to ``algo``."""
    if algo not in ALGOS:
        raise DrpaError(f"unknown algorithm {algo!r}")
    cluster._passes.add((epoch, layer))
    r = cluster.config.r if algo == "cd-r" else 0
    if algo == "0c":
        return aggs
    if r == 0:
        bin_ = (0, cluster.n_trees)
        alltoall(cluster, cluster.map_ranks(
            lambda rk, a: gather_leaves(rk, bin_, layer, epoch, a, spec), aggs), epoch)
        cluster.map_ranks(lambda rk, a, m: scatter_reduce_roots(rk, m, a, spec),
                          aggs, _consume(cluster, MsgKind.LEAF_TO_ROOT, layer, epoch))
        alltoall(cluster, cluster.map_ranks(
            lambda rk, a: gather_roots(rk, bin_, layer, epoch, a), aggs), epoch)
        cluster.map_ranks(lambda rk, a, m: scatter_leaves(rk, m, a),
                          aggs, _consume(cluster, MsgKind.ROOT_TO_LEAF, layer, epoch))
        return aggs

    if cluster.schedule.r != r:
        cluster.schedule = make_schedule(cluster.n_trees, r)
    last = cluster._last_epoch.get(layer)
    expected = 0 if last is None else last + 1
    if epoch != expected:
        raise DrpaError(f"cd-r layer {layer}: got epoch {epoch}, expected {expected}")
    cluster._last_epoch[layer] = epoch
    bin_ = cluster.schedule.bin_for_epoch(epoch)
    alltoall(cluster, cluster.map_ranks(
        lambda rk, a: gather_leaves(rk, bin_, layer, epoch, a, spec), aggs), epoch + r)
    if epoch >= r:
        cluster.map_ranks(lambda rk, a, m: scatter_reduce_roots(rk, m, a, spec),
                          aggs, _consume(cluster, MsgKind.LEAF_TO_ROOT, layer, epoch))
        alltoall(cluster, cluster.map_ranks(
            lambda rk, a: gather_roots(rk, bin_, layer, epoch, a), aggs), epoch + r)
    if epoch >= 2 * r:
        cluster.map_ranks(lambda rk, a, m: scatter_leaves(rk, m, a),
                          aggs, _consume(cluster, MsgKind.ROOT_TO_LEAF, layer, epoch))
    return aggs


def run_epoch_aggregate(cluster: Cluster, algo: Optional[str], epoch: int, layer: int,
                        feats: list[np.ndarray], spec: OperatorSpec = SUM) -> list[np.ndarray]:
    """One layer's distributed aggregation for ``epoch``; returns per-rank outputs."""
    algo = algo or cluster.config.algo
    aggs = cluster.map_ranks(lambda rk, f: local_aggregate(rk, f, spec, cluster.sched), feats)
    return remote_sync(cluster, algo, epoch, layer, aggs, spec)


def assemble(cluster: Cluster, outs: list[np.ndarray]) -> np.ndarray:
    """Global matrix taking each vertex's row from its lowest-rank clone."""
    d = outs[0].shape[1]
    full = np.zeros((cluster.num_vertices, d), dtype=outs[0].dtype)
    seen = np.zeros(cluster.num_vertices, dtype=bool)
    for rk, out in zip(cluster.ranks, outs):
        fresh = ~seen[rk.l2g]
        full[rk.l2g[fresh]] = out[fresh]
        seen[rk.l2g] = True
    return full


def clones_consistent(cluster: Cluster, outs: list[np.ndarray]) -> bool:
    ref = assemble(cluster, outs)
    return all(np.array_equal(out, ref[rk.l2g]) for rk, out in zip(cluster.ranks, outs))


def comm_report(cluster: Cluster) -> list[dict]:
    """Rows of ``epoch, rank, layer, kind, elements_sent, elements_received``.

    Every (epoch, layer) pass that ran gets a row per rank and kind, zeros included.
    """
    keys = set(cluster.counters)
    for epoch, layer in cluster._passes:
        for rk in range(cluster.k):
            for kind in MsgKind:
                keys.add((epoch, rk, layer, kind.value))
    rows = []
    for key in sorted(keys):
        sent, recv = cluster.counters.get(key, (0, 0))
        e, rk, layer, kind = key
        rows.append({"epoch": e, "rank": rk, "layer": layer, "kind": kind,
                     "elements_sent": sent, "elements_received": recv})
    return rows


def volume(cluster: Cluster, *, epoch=None, layer=None, kind=None, field="elements_sent") -> int:
    total = 0
    for (e, _, lay, k), (sent, recv) in cluster.counters.items():
        if (epoch is None or e == epoch) and (layer is None or lay == layer) and (kind is None or k == MsgKind(kind).value):
            total += sent if field == "elements_sent" else recv
    return total


def comm_report_csv(cluster: Cluster) -> str:
    buf = io.StringIO()
    cols = ["epoch", "rank", "layer", "kind", "elements_sent", "elements_received"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    w.writerows(comm_report(cluster))
    return buf.getvalue()


def build_cluster(edges, num_vertices: int, config: ClusterConfig, slack: float = 1.1,
                  **kwargs) -> Cluster:
    """Partition ``edges`` and stand up a cluster in one call."""
    from .partition import build_split_trees, build_vertex_map, libra_partition
    ps = libra_partition(edges, num_vertices, config.k, slack)
    vm = build_vertex_map(ps)
    forest = build_split_trees(vm, config.seed)
    return Cluster(ps, vm, forest, config, **kwargs)
