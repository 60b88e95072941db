"""Vertex-cut edge partitioning, local/global vertex IDs and split trees.

Edges are streamed in input order and each goes to the least-loaded partition
that already holds one of its endpoints, preferring partitions holding both,
subject to a hard per-partition edge capacity of ``ceil(slack*|E|/k)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .graph import CsrGraph, build_csr
from .io import write_edge_list


@dataclass(frozen=True)
class Partition:
    index: int
    edge_ids: np.ndarray     # global edge IDs, input order
    edges: np.ndarray        # (E_p, 2) global (src, dst)
    vertices: np.ndarray     # global IDs present, ascending
    graph: CsrGraph          # edges re-indexed to positions in ``vertices``

    @property
    def load(self) -> int:
        return len(self.edge_ids)


@dataclass(frozen=True)
class PartitionSet:
    k: int
    slack: float
    num_vertices: int
    num_edges: int
    capacity: int
    parts: tuple

    @property
    def load(self) -> list[int]:
        return [p.load for p in self.parts]

    def presence(self) -> dict[int, list[int]]:
        """Global vertex ID -> ascending list of partitions containing it."""
        pres: dict[int, list[int]] = {}
        for p in self.parts:
            for v in p.vertices.tolist():
                pres.setdefault(v, []).append(p.index)
        return pres

    def presence_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_vertices, dtype=np.int64)
        for p in self.parts:
            counts[p.vertices] += 1
        return counts


def edge_capacity(num_edges: int, k: int, slack: float) -> int:
    # exact decimal arithmetic: 1.1*10 must give 11, not 11.000000000000002
    return math.ceil(Fraction(str(slack)) * num_edges / k)


def libra_partition(edges, num_vertices: int, k: int, slack: float = 1.1) -> PartitionSet:
    if k < 1:
        raise ValueError("k must be >= 1")
    if slack < 1:
        raise ValueError("slack must be >= 1")
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) and num_vertices <= 0:
        raise ValueError("num_vertices must be positive when edges are given")
    if len(e) and (e.min() < 0 or e.max() >= num_vertices):
        raise ValueError("edge endpoint out of range")
    cap = edge_capacity(len(e), k, slack)
    load = [0] * k
    # membership[v] is a bitmask over partitions; k is small in practice
    member = [0] * num_vertices
    assign = np.empty(len(e), dtype=np.int64)
    for i, (u, v) in enumerate(e.tolist()):
        mu, mv = member[u], member[v]
        both = mu & mv
        either = mu | mv
        best = -1
        for mask in (both, either):
            if not mask:
                continue
            for p in range(k):
                if mask >> p & 1 and load[p] < cap and (best < 0 or load[p] < load[best]):
                    best = p
            if best >= 0:
                break
        if best < 0:
            best = min(range(k), key=lambda p: (load[p], p))
        assign[i] = best
        load[best] += 1
        bit = 1 << best
        member[u] |= bit
        member[v] |= bit

    parts = []
    for p in range(k):
        ids = np.flatnonzero(assign == p)
        pe = e[ids]
        verts = np.unique(pe)
        local = np.searchsorted(verts, pe) if len(pe) else pe
        parts.append(Partition(p, ids, pe, verts, build_csr(local, len(verts))))
    return PartitionSet(k, slack, num_vertices, len(e), cap, tuple(parts))


def replication_factor(ps: PartitionSet) -> float:
    counts = ps.presence_counts()
    present = counts[counts > 0]
    return float(present.sum() / present.size) if present.size else 1.0


def edge_balance(ps: PartitionSet) -> float:
    if ps.num_edges == 0:
        raise ValueError("edge balance undefined for an empty graph")
    return max(ps.load) / (ps.num_edges / ps.k)


@dataclass(frozen=True)
class VertexMap:
    ranges: tuple                 # ((lo, hi), ...) per partition
    l2g: np.ndarray               # local ID -> global ID
    clone_lists: dict             # global ID -> local IDs of all clones (partition order)

    def partition_of(self, local_id: int) -> int:
        his = [hi for _, hi in self.ranges]
        p = int(np.searchsorted(his, local_id, side="right"))
        if p >= len(self.ranges) or local_id < 0:
            raise IndexError(f"local id {local_id} out of range")
        return p

    def lookup(self, local_id: int) -> tuple[int, int]:
        """Local ID -> (partition, global ID)."""
        return self.partition_of(local_id), int(self.l2g[local_id])

    def local_ids(self, p: int) -> range:
        lo, hi = self.ranges[p]
        return range(lo, hi)


def build_vertex_map(ps: PartitionSet) -> VertexMap:
    ranges, l2g = [], []
    lo = 0
    for part in ps.parts:
        hi = lo + len(part.vertices)
        ranges.append((lo, hi))
        l2g.append(part.vertices)
        lo = hi
    l2g_arr = np.concatenate(l2g) if l2g else np.empty(0, dtype=np.int64)
    clones: dict[int, list[int]] = {}
    for local, g in enumerate(l2g_arr.tolist()):
        clones.setdefault(g, []).append(local)
    split = {g: ids for g, ids in clones.items() if len(ids) > 1}
    return VertexMap(tuple(ranges), l2g_arr.astype(np.int64), split)


@dataclass(frozen=True)
class SplitTree:
    global_id: int
    root: int             # local ID
    leaves: tuple         # local IDs


@dataclass(frozen=True)
class SplitForest:
    trees: tuple          # ordered by ascending global ID; position is the tree id
    seed: int

    def __len__(self):
        return len(self.trees)


def build_split_trees(vm: VertexMap, seed: int = 0) -> SplitForest:
    """One tree per split vertex with a root drawn uniformly from its clones.

    The draw for a vertex depends only on ``(seed, global ID)``.
    """
    trees = []
    for g in sorted(vm.clone_lists):
        clones = vm.clone_lists[g]
        rng = np.random.default_rng([seed, g])
        r = int(rng.integers(len(clones)))
        trees.append(SplitTree(g, clones[r], tuple(c for i, c in enumerate(clones) if i != r)))
    return SplitForest(tuple(trees), seed)


def partition_stats(ps: PartitionSet) -> dict:
    counts = ps.presence_counts()
    split_pct = []
    for part in ps.parts:
        nv = len(part.vertices)
        split_pct.append(100.0 * int(np.count_nonzero(counts[part.vertices] > 1)) / nv if nv else 0.0)
    return {
        "k": ps.k,
        "rf": replication_factor(ps),
        "balance": edge_balance(ps) if ps.num_edges else 1.0,
        "split_pct": split_pct,
        "load": ps.load,
    }


def write_partition_dir(out_dir, ps: PartitionSet, vm: VertexMap, forest: SplitForest) -> dict:
    """Write ``part-<p>/edges.txt``, ``part-<p>/l2g.txt`` and ``meta.json``.

    ``edges.txt`` uses vertex-map local IDs (consecutive across partitions);
    line ``i`` of ``l2g.txt`` is the global ID of local ID ``lo_p + i``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for part, (lo, _) in zip(ps.parts, vm.ranges):
        pdir = out / f"part-{part.index}"
        pdir.mkdir(exist_ok=True)
        local = np.searchsorted(part.vertices, part.edges) + lo if len(part.edges) else part.edges
        write_edge_list(pdir / "edges.txt", local)
        np.savetxt(pdir / "l2g.txt", part.vertices, fmt="%d")
    stats = partition_stats(ps)
    meta = {
        "k": ps.k,
        "slack": ps.slack,
        "seed": forest.seed,
        "ranges": [list(r) for r in vm.ranges],
        "rf": stats["rf"],
        "balance": stats["balance"],
        "split_trees": [
            {"global_id": t.global_id, "root_local": t.root, "leaves_local": list(t.leaves)}
            for t in forest.trees
        ],
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    return meta
