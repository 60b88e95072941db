"""Closed-form aggregation-work and memory estimates for GraphSAGE runs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True)
class WorkEstimate:
    per_hop: tuple      # billions of operations per hop
    total: float


def estimate_work(hops: Iterable) -> WorkEstimate:
    """Aggregation work per hop: vertices x average degree x feature size, in 1e9 ops.

    ``hops`` is an iterable of ``(num_vertices, avg_degree, feat_dim)``.
    """
    per_hop = []
    for n, deg, feat in hops:
        if n < 0 or deg < 0 or feat < 0:
            raise ValueError(f"negative work parameter in hop {(n, deg, feat)}")
        per_hop.append(n * deg * feat / 1e9)
    return WorkEstimate(tuple(per_hop), sum(per_hop))


def estimate_memory(N: int, f: int, h1: int, h2: int, l: int) -> dict:
    """Element counts for a three-layer model on ``N`` vertices.

    Weights, input features, the three aggregation outputs (widths f, h1, h2)
    and the three MLP outputs (widths h1, h2, l).
    """
    if min(N, f, h1, h2, l) < 0:
        raise ValueError("dimensions must be non-negative")
    out = {
        "weights": f * h1 + h1 * h2 + h2 * l,
        "input": N * f,
        "aggregation": N * (f + h1 + h2),
        "mlp": N * (h1 + h2 + l),
    }
    out["total"] = sum(out.values())
    return out
