"""Graph containers, the binary/reduce operator algebra and the reference
aggregation primitive.

Graphs are stored destination-major: ``A[v]`` lists the sources ``u`` of the
edges ``u -> v``. Feature matrices are plain C-contiguous 2-D numpy arrays of
shape ``(rows, d)``; supported element types are float32, float64 and int64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

BINARY_OPS = ("add", "sub", "mul", "div", "copylhs", "copyrhs")
REDUCE_OPS = ("sum", "max", "min")
ELEMENT_TYPES = (np.dtype(np.float32), np.dtype(np.float64), np.dtype(np.int64))

# integer codes shared with the compiled kernel
BINARY_CODES = {name: i for i, name in enumerate(BINARY_OPS)}
REDUCE_CODES = {name: i for i, name in enumerate(REDUCE_OPS)}


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class CsrGraph:
    num_vertices: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    edge_id: np.ndarray

    def __post_init__(self):
        for name in ("row_ptr", "col_idx", "edge_id"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_edges(self) -> int:
        return int(self.row_ptr[-1])

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[v]:self.row_ptr[v + 1]]

    def destinations(self) -> np.ndarray:
        """Destination vertex of every CSR slot (parallel to ``col_idx``)."""
        return np.repeat(np.arange(self.num_vertices, dtype=np.int64), np.diff(self.row_ptr))

    def edges(self) -> np.ndarray:
        """Edges as an ``(E, 2)`` array of (src, dst), in original input order."""
        out = np.empty((self.num_edges, 2), dtype=np.int64)
        out[self.edge_id, 0] = self.col_idx
        out[self.edge_id, 1] = self.destinations()
        return out

    def validate(self) -> None:
        rp = self.row_ptr
        if rp.shape != (self.num_vertices + 1,) or rp[0] != 0:
            raise GraphError("row_ptr must have length num_vertices+1 and start at 0")
        if np.any(np.diff(rp) < 0):
            raise GraphError("row_ptr must be non-decreasing")
        ne = self.num_edges
        if self.col_idx.shape != (ne,) or self.edge_id.shape != (ne,):
            raise GraphError("col_idx/edge_id length must equal num_edges")
        if ne and (self.col_idx.min() < 0 or self.col_idx.max() >= self.num_vertices):
            raise GraphError("col_idx entry out of range")
        if not np.array_equal(np.sort(self.edge_id), np.arange(ne)):
            raise GraphError("edge_id must be a permutation of 0..num_edges-1")


@dataclass(frozen=True)
class OperatorSpec:
    binary: str = "copylhs"
    reduce: str = "sum"

    def __post_init__(self):
        if self.binary not in BINARY_OPS:
            raise ValueError(f"unknown binary operator {self.binary!r}")
        if self.reduce not in REDUCE_OPS:
            raise ValueError(f"unknown reduce operator {self.reduce!r}")

    @classmethod
    def parse(cls, text: str) -> "OperatorSpec":
        """Parse ``"mul,sum"`` style strings."""
        binary, _, reduce = text.partition(",")
        return cls(binary.strip(), (reduce or "sum").strip())

    @property
    def uses_vertex(self) -> bool:
        return self.binary != "copyrhs"

    @property
    def uses_edge(self) -> bool:
        return self.binary != "copylhs"

    def __str__(self) -> str:
        return f"{self.binary},{self.reduce}"


ALL_SPECS = tuple(OperatorSpec(b, r) for b in BINARY_OPS for r in REDUCE_OPS)


def build_csr(edges: Iterable, num_vertices: int) -> CsrGraph:
    """Build a destination-major CSR from ``(src, dst)`` pairs.

    Sources within a row keep input-edge order and ``edge_id`` records each
    edge's position in the input, so it indexes the edge-feature matrix.
    """
    if not isinstance(edges, np.ndarray):
        edges = list(edges)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if num_vertices < 0:
        raise GraphError("num_vertices must be non-negative")
    bad = np.flatnonzero((e < 0).any(axis=1) | (e >= num_vertices).any(axis=1))
    if bad.size:
        i = int(bad[0])
        raise GraphError(f"edge {i} ({e[i, 0]}, {e[i, 1]}) out of range for {num_vertices} vertices")
    order = np.argsort(e[:, 1], kind="stable")
    counts = np.bincount(e[:, 1], minlength=num_vertices)
    row_ptr = np.zeros(num_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrGraph(num_vertices, row_ptr, e[order, 0], order)


def transpose(g: CsrGraph) -> CsrGraph:
    """Reverse every edge. Edge IDs travel with their edge."""
    src = g.col_idx
    dst = g.destinations()
    # stable sort by new destination (old source), ties kept in edge-id order
    key = np.lexsort((g.edge_id, src))
    counts = np.bincount(src, minlength=g.num_vertices)
    row_ptr = np.zeros(g.num_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrGraph(g.num_vertices, row_ptr, dst[key], g.edge_id[key])


def in_degrees(g: CsrGraph) -> np.ndarray:
    return np.diff(g.row_ptr)


def reduce_identity(reduce: str, dtype) -> np.generic:
    dtype = np.dtype(dtype)
    if reduce == "sum":
        return dtype.type(0)
    if dtype.kind == "i":
        info = np.iinfo(dtype)
        return dtype.type(info.min if reduce == "max" else info.max)
    return dtype.type(-np.inf if reduce == "max" else np.inf)


def apply_elem(spec: OperatorSpec, x, y, z):
    """Scalar ``z (+) (x (*) y)``.

    Integer division floors, like Python's ``//``. Division by zero raises
    ``ZeroDivisionError`` instead of producing inf/NaN.
    """
    b = spec.binary
    if b == "copylhs":
        m = x
    elif b == "copyrhs":
        m = y
    elif b == "add":
        m = x + y
    elif b == "sub":
        m = x - y
    elif b == "mul":
        m = x * y
    else:
        if y == 0:
            raise ZeroDivisionError("div operator with zero edge operand")
        integral = isinstance(x, (int, np.integer)) and isinstance(y, (int, np.integer))
        m = x // y if integral else x / y
    if spec.reduce == "sum":
        return z + m
    if spec.reduce == "max":
        return m if m > z else z
    return m if m < z else z


def _binary_ufunc(binary: str, dtype):
    if binary == "div":
        return np.floor_divide if np.dtype(dtype).kind == "i" else np.true_divide
    return {"add": np.add, "sub": np.subtract, "mul": np.multiply}[binary]


REDUCE_UFUNCS = {"sum": np.add, "max": np.maximum, "min": np.minimum}


def combine(spec: OperatorSpec, x: Optional[np.ndarray], y: Optional[np.ndarray]) -> np.ndarray:
    """Vectorised ``x (*) y`` over matching arrays."""
    if spec.binary == "copylhs":
        return x
    if spec.binary == "copyrhs":
        return y
    return _binary_ufunc(spec.binary, x.dtype)(x, y)


def check_inputs(g: CsrGraph, fV: Optional[np.ndarray], fE: Optional[np.ndarray], spec: OperatorSpec):
    """Validate feature shapes for an aggregation and return ``(dtype, d)``.

    Shared by every aggregation implementation so they fail identically.
    """
    if spec.uses_vertex and fV is None:
        raise GraphError(f"operator {spec.binary} needs vertex features")
    if spec.uses_edge and fE is None:
        raise GraphError(f"operator {spec.binary} needs edge features")
    ref = fV if fV is not None else fE
    if ref.ndim != 2:
        raise GraphError("feature matrices must be 2-D")
    if ref.dtype not in ELEMENT_TYPES:
        raise GraphError(f"unsupported element type {ref.dtype}")
    d = ref.shape[1]
    if fV is not None and fV.shape[0] != g.num_vertices:
        raise GraphError(f"fV has {fV.shape[0]} rows, graph has {g.num_vertices} vertices")
    if fE is not None and spec.uses_edge:
        if fE.shape[0] < g.num_edges:
            raise GraphError(f"fE has {fE.shape[0]} rows, graph has {g.num_edges} edges")
        if fE.shape[1] != d:
            raise GraphError("fV and fE feature dimensions differ")
        if fV is not None and fV.dtype != fE.dtype:
            raise GraphError("fV and fE element types differ")
        if spec.binary == "div" and g.num_edges and np.any(fE[g.edge_id] == 0):
            raise ZeroDivisionError("div operator with zero edge operand")
    return ref.dtype, d


def ap_reference(g: CsrGraph, fV: Optional[np.ndarray], fE: Optional[np.ndarray],
                 spec: OperatorSpec) -> np.ndarray:
    """Unoptimised aggregation primitive; the oracle for every other path.

    Row by row, the output starts at the reduction identity and folds in each
    neighbour message ``fV[u] (*) fE[e_uv]`` in CSR order. Rows with no
    in-edges are returned as zeros for every reduction.
    """
    dtype, d = check_inputs(g, fV, fE, spec)
    out = np.zeros((g.num_vertices, d), dtype=dtype)
    red = REDUCE_UFUNCS[spec.reduce]
    ident = np.full((1, d), reduce_identity(spec.reduce, dtype), dtype=dtype)
    for v in range(g.num_vertices):
        lo, hi = g.row_ptr[v], g.row_ptr[v + 1]
        if lo == hi:
            continue
        x = fV[g.col_idx[lo:hi]] if spec.uses_vertex else None
        y = fE[g.edge_id[lo:hi]] if spec.uses_edge else None
        msgs = combine(spec, x, y)
        # accumulate is a strict left fold, so float results follow row order exactly
        out[v] = red.accumulate(np.concatenate([ident, msgs]), axis=0)[-1]
    return out
