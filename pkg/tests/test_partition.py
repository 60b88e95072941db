import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggforge.partition import (build_split_trees, build_vertex_map, edge_balance, edge_capacity,
                                libra_partition, partition_stats, replication_factor,
                                write_partition_dir)

from conftest import G3_EDGES, random_edges


def greedy_oracle(edges, k, slack):
    """Set-based restatement of the tiered greedy rule."""
    cap = math.ceil(round(slack * 1000) * len(edges) / (1000 * k))
    load = [0] * k
    holds = [set() for _ in range(k)]
    out = []
    for u, v in edges:
        R = [p for p in range(k) if (u in holds[p] or v in holds[p]) and load[p] < cap]
        if R:
            both = [p for p in R if u in holds[p] and v in holds[p]]
            pool = both or R
            p = min(pool, key=lambda q: (load[q], q))
        else:
            p = min(range(k), key=lambda q: (load[q], q))
        out.append(p)
        load[p] += 1
        holds[p] |= {u, v}
    return out


def _assignment(ps, n_edges):
    a = np.empty(n_edges, dtype=np.int64)
    for p in ps.parts:
        a[p.edge_ids] = p.index
    return a.tolist()


def test_g3_partition():
    ps = libra_partition(G3_EDGES, 3, 2, 1.1)
    assert ps.capacity == 2
    assert ps.parts[0].edges.tolist() == [[0, 2], [1, 2]]
    assert ps.parts[1].edges.tolist() == [[2, 0]]
    assert ps.load == [2, 1]
    assert ps.presence() == {0: [0, 1], 1: [0], 2: [0, 1]}
    assert replication_factor(ps) == pytest.approx(5 / 3)
    assert edge_balance(ps) == pytest.approx(4 / 3)


def test_single_partition():
    edges = random_edges(np.random.default_rng(0), 30, 0.1)
    ps = libra_partition(edges, 30, 1)
    assert ps.load == [len(edges)]
    assert replication_factor(ps) == 1.0
    assert partition_stats(ps)["split_pct"] == [0.0]


def test_capacity_exact_decimal():
    assert edge_capacity(10, 1, 1.1) == 11
    assert edge_capacity(1000, 8, 1.1) == 138
    assert edge_capacity(3, 2, 1.1) == 2


def test_power_law_capacity():
    import networkx as nx
    g = nx.barabasi_albert_graph(400, 3, seed=2)
    edges = np.array(list(g.edges()))[:1000]
    ps = libra_partition(edges, 400, 8)
    assert max(ps.load) <= 138


def test_errors():
    with pytest.raises(ValueError):
        libra_partition(G3_EDGES, 3, 0)
    with pytest.raises(ValueError):
        libra_partition(G3_EDGES, 0, 2)
    with pytest.raises(ValueError):
        libra_partition(G3_EDGES, 3, 2, slack=0.9)
    with pytest.raises(ValueError):
        edge_balance(libra_partition([], 3, 2))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.floats(0.02, 0.4), st.integers(1, 6), st.sampled_from([1.0, 1.1, 1.5]),
       st.integers(0, 2**31))
def test_libra_invariants(n, density, k, slack, seed):
    rng = np.random.default_rng(seed)
    edges = random_edges(rng, n, density)
    ps = libra_partition(edges, n, k, slack)
    assert _assignment(ps, len(edges)) == greedy_oracle(edges.tolist(), k, slack)
    ids = np.sort(np.concatenate([p.edge_ids for p in ps.parts]))
    assert np.array_equal(ids, np.arange(len(edges)))
    assert sum(ps.load) == len(edges)
    assert max(ps.load) <= ps.capacity
    for p in ps.parts:
        assert np.array_equal(p.vertices, np.unique(p.edges))
        # local graph maps back to the assigned global edges
        back = p.vertices[p.graph.edges()]
        assert np.array_equal(back, p.edges)
    if len(edges):
        assert 1.0 <= replication_factor(ps) <= k
        assert edge_balance(ps) <= slack + k / len(edges) + 1e-12
    again = libra_partition(edges, n, k, slack)
    assert _assignment(again, len(edges)) == _assignment(ps, len(edges))


def test_vertex_map_g3():
    ps = libra_partition(G3_EDGES, 3, 2)
    vm = build_vertex_map(ps)
    assert vm.ranges == ((0, 3), (3, 5))
    assert vm.l2g.tolist() == [0, 1, 2, 0, 2]
    assert vm.clone_lists == {0: [0, 3], 2: [2, 4]}
    assert vm.lookup(4) == (1, 2)
    assert vm.partition_of(2) == 0 and vm.partition_of(3) == 1
    with pytest.raises(IndexError):
        vm.partition_of(5)


def test_split_forest_g3():
    vm = build_vertex_map(libra_partition(G3_EDGES, 3, 2))
    forest = build_split_trees(vm, seed=11)
    assert len(forest) == 2
    assert [t.global_id for t in forest.trees] == [0, 2]
    for t, clones in zip(forest.trees, ([0, 3], [2, 4])):
        assert t.root in clones and sorted((t.root,) + t.leaves) == clones
    assert build_split_trees(vm, seed=11) == forest


def test_split_forest_three_clones_and_seed_spread():
    # vertex 0 is touched by edges landing in three partitions
    edges = [(1, 2), (3, 4), (5, 6), (0, 1), (0, 3), (0, 5)]
    ps = libra_partition(edges, 7, 3, slack=1.0)
    vm = build_vertex_map(ps)
    assert len(vm.clone_lists[0]) == 3
    roots = set()
    for seed in range(30):
        (tree,) = [t for t in build_split_trees(vm, seed).trees if t.global_id == 0]
        assert len(tree.leaves) == 2
        roots.add(tree.root)
    assert roots == set(vm.clone_lists[0])


def test_partition_stats_g3():
    stats = partition_stats(libra_partition(G3_EDGES, 3, 2))
    assert stats["split_pct"] == pytest.approx([200 / 3, 100.0])
    assert set(stats) >= {"k", "rf", "balance", "split_pct"}
    json.dumps(stats)


def test_partition_directory(tmp_path):
    ps = libra_partition(G3_EDGES, 3, 2)
    vm = build_vertex_map(ps)
    forest = build_split_trees(vm, 4)
    write_partition_dir(tmp_path, ps, vm, forest)
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["k"] == 2 and meta["slack"] == 1.1 and meta["seed"] == 4
    assert meta["ranges"] == [[0, 3], [3, 5]]
    assert meta["rf"] == pytest.approx(5 / 3)
    assert [t["global_id"] for t in meta["split_trees"]] == [0, 2]
    assert (tmp_path / "part-0" / "edges.txt").read_text() == "0 2\n1 2\n"
    assert (tmp_path / "part-1" / "edges.txt").read_text() == "4 3\n"
    assert (tmp_path / "part-1" / "l2g.txt").read_text().split() == ["0", "2"]
