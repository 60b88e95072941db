"""Seeded synthetic graphs, features and labels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import networkx as nx
import numpy as np

KINDS = ("erdos_renyi", "barabasi_albert", "sbm")


@dataclass(frozen=True)
class GenSpec:
    kind: str
    n: int = 0
    p: float = 0.0
    m: int = 1
    blocks: tuple = ()
    p_in: float = 0.0
    p_out: float = 0.0
    seed: int = 0
    duplicate: bool = True      # emit each undirected edge as two directed edges
    feat_dim: int = 16
    features_dtype: str = "f64"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.kind == "erdos_renyi" and (self.n < 0 or not 0 <= self.p <= 1):
            raise ValueError("erdos_renyi needs n >= 0 and 0 <= p <= 1")
        if self.kind == "barabasi_albert" and not 1 <= self.m < self.n:
            raise ValueError("barabasi_albert needs 1 <= m < n")
        if self.kind == "sbm":
            if not self.blocks or min(self.blocks) < 1:
                raise ValueError("sbm needs at least one non-empty block")
            if not (0 <= self.p_in <= 1 and 0 <= self.p_out <= 1):
                raise ValueError("sbm probabilities must lie in [0, 1]")
        if self.feat_dim < 1:
            raise ValueError("feat_dim must be >= 1")
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))

    @property
    def num_vertices(self) -> int:
        return sum(self.blocks) if self.kind == "sbm" else self.n


def _graph(spec: GenSpec) -> nx.Graph:
    if spec.kind == "erdos_renyi":
        return nx.gnp_random_graph(spec.n, spec.p, seed=spec.seed)
    if spec.kind == "barabasi_albert":
        return nx.barabasi_albert_graph(spec.n, spec.m, seed=spec.seed)
    k = len(spec.blocks)
    probs = [[spec.p_in if i == j else spec.p_out for j in range(k)] for i in range(k)]
    return nx.stochastic_block_model(list(spec.blocks), probs, seed=spec.seed)


def generate_edges(spec: GenSpec) -> np.ndarray:
    """Directed ``(E, 2)`` edge array; ``duplicate`` adds the reverse of every edge."""
    und = np.array(sorted((min(u, v), max(u, v)) for u, v in _graph(spec).edges()),
                   dtype=np.int64).reshape(-1, 2)
    if spec.kind == "barabasi_albert":
        # new vertex -> the vertex it attached to
        und = und[:, ::-1]
    if not spec.duplicate:
        return np.ascontiguousarray(und)
    out = np.empty((2 * len(und), 2), dtype=np.int64)
    out[0::2] = und
    out[1::2] = und[:, ::-1]
    return out


def generate_features(spec: GenSpec, rows: Optional[int] = None) -> np.ndarray:
    """Uniform(-1, 1) features from a stream independent of the graph draw."""
    rng = np.random.default_rng([spec.seed, 1])
    x = rng.uniform(-1.0, 1.0, size=(rows if rows is not None else spec.num_vertices, spec.feat_dim))
    return x.astype(np.float32 if spec.features_dtype == "f32" else np.float64)


def generate_labels(spec: GenSpec) -> Optional[np.ndarray]:
    """Block membership for SBM graphs, ``None`` otherwise."""
    if spec.kind != "sbm":
        return None
    return np.repeat(np.arange(len(spec.blocks)), spec.blocks).astype(np.int64)
