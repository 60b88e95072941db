"""GraphSAGE with the GCN aggregator, trained full-batch with hand-written
backpropagation.

Layer ``l`` computes ``h_l = act(((A h_{l-1} + h_{l-1}) / (deg + 1)) W_l)``
with ReLU on every layer but the last. ``A h`` is the (copylhs, sum)
aggregation primitive; its gradient is the same primitive on the transposed
graph.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import CsrGraph, OperatorSpec, in_degrees, transpose
from .kernel import SchedSpec, ap_blocked, plan_blocks

SUM = OperatorSpec("copylhs", "sum")


def gcn_normalize(agg: np.ndarray, orig: np.ndarray, in_deg) -> np.ndarray:
    """``(agg + orig) / (in_deg + 1)``, row-wise for matrices."""
    denom = np.asarray(in_deg, dtype=np.float64) + 1.0
    if np.ndim(agg) == 2:
        denom = denom[:, None]
    return (agg + orig) / denom


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


class SageModel:
    def __init__(self, weights: Sequence[np.ndarray], lr: float = 0.01, wd: float = 5e-4):
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"weight chain mismatch: {a.shape} then {b.shape}")
        self.lr = lr
        self.wd = wd
        self._acts: dict[int, tuple] = {}
        self.grads: list[Optional[np.ndarray]] = [None] * len(self.weights)

    @classmethod
    def init(cls, dims: Sequence[int], seed: int = 0, **hyper) -> "SageModel":
        """Seeded Glorot-uniform weights for the dimension chain ``dims`` (f, h1, ..., l)."""
        rng = np.random.default_rng(seed)
        return cls([glorot(a, b, rng) for a, b in zip(dims, dims[1:])], **hyper)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "SageModel":
        return SageModel([w.copy() for w in self.weights], self.lr, self.wd)

    def forward_layer(self, layer: int, agg: np.ndarray, h: np.ndarray, deg) -> np.ndarray:
        if agg.shape[1] != self.weights[layer].shape[0]:
            raise ValueError(f"layer {layer}: input width {agg.shape[1]}, weight expects "
                             f"{self.weights[layer].shape[0]}")
        normed = gcn_normalize(agg, h, deg)
        z = normed @ self.weights[layer]
        self._acts[layer] = (normed, z, np.asarray(deg, dtype=np.float64))
        return np.maximum(z, 0.0) if layer < self.num_layers - 1 else z

    def backward_layer(self, layer: int, dout: np.ndarray) -> np.ndarray:
        """Store the weight gradient and return d(normalised sum) / (deg+1).

        The returned matrix is the gradient with respect to both the aggregate
        and the self term.
        """
        if layer not in self._acts:
            raise RuntimeError("backward called without a stored forward pass")
        normed, z, deg = self._acts.pop(layer)
        dz = dout * (z > 0) if layer < self.num_layers - 1 else dout
        self.grads[layer] = normed.T @ dz
        return (dz @ self.weights[layer].T) / (deg + 1.0)[:, None]


def sgd_step(model: SageModel, grads: Optional[Sequence[np.ndarray]] = None) -> None:
    """``w <- w - lr * (grad + wd * w)``."""
    grads = model.grads if grads is None else grads
    for w, g in zip(model.weights, grads):
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != weight shape {w.shape}")
        w -= model.lr * (g + model.wd * w)


def loss_grad(logits: np.ndarray, labels: np.ndarray, owner_mask: Optional[np.ndarray] = None,
              normalizer: Optional[float] = None) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy over owned labelled rows.

    Rows count when ``owner_mask`` is set and the label is >= 0. The loss is
    the sum divided by ``normalizer`` (default: number of counted rows), so
    ranks can pass a global count and add their partial losses.
    """
    labels = np.asarray(labels)
    mask = labels >= 0
    if owner_mask is not None:
        mask &= owner_mask
    count = int(mask.sum())
    if normalizer is None:
        if count == 0:
            raise ValueError("no labelled vertex to compute the loss on")
        normalizer = count
    dlogits = np.zeros_like(logits)
    if count == 0:
        return 0.0, dlogits
    z = logits[mask]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    y = labels[mask]
    loss = float((logsum - z[np.arange(count), y]).sum() / normalizer)
    p = np.exp(z - logsum[:, None])
    p[np.arange(count), y] -= 1.0
    dlogits[mask] = p / normalizer
    return loss, dlogits


# -- single process -----------------------------------------------------------

@dataclass
class GraphContext:
    graph: CsrGraph
    block_size: Optional[int] = None
    sched: SchedSpec = field(default_factory=lambda: SchedSpec(workers=1))

    def __post_init__(self):
        B = self.block_size or max(1, self.graph.num_vertices)
        self.plan = plan_blocks(self.graph, B)
        self.plan_t = plan_blocks(transpose(self.graph), B)
        self.deg = in_degrees(self.graph)


def forward(model: SageModel, ctx: GraphContext, x: np.ndarray) -> np.ndarray:
    if x.shape[0] != ctx.graph.num_vertices:
        raise ValueError(f"{x.shape[0]} feature rows for {ctx.graph.num_vertices} vertices")
    h = np.asarray(x, dtype=np.float64)
    for layer in range(model.num_layers):
        agg = ap_blocked(ctx.plan, h, None, SUM, ctx.sched)
        h = model.forward_layer(layer, agg, h, ctx.deg)
    return h


def backward(model: SageModel, ctx: GraphContext, dlogits: np.ndarray) -> tuple[list, np.ndarray]:
    """Gradients for every weight matrix and for the input features."""
    dh = dlogits
    for layer in reversed(range(model.num_layers)):
        s = model.backward_layer(layer, dh)
        dh = ap_blocked(ctx.plan_t, s, None, SUM, ctx.sched) + s
    return list(model.grads), dh


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, model: SageModel, extra: Optional[dict] = None) -> tuple[Path, Path]:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (little-endian f64 weights)."""
    path = Path(path)
    header_path, blob_path = path.with_suffix(".json"), path.with_suffix(".bin")
    layers, offset, blobs = [], 0, []
    for w in model.weights:
        b = np.ascontiguousarray(w, dtype="<f8").tobytes()
        layers.append({"shape": list(w.shape), "offset": offset, "nbytes": len(b)})
        offset += len(b)
        blobs.append(b)
    header = {"format": "aggforge-sage", "version": 1, "dtype": "f64", "blob": blob_path.name,
              "lr": model.lr, "wd": model.wd, "layers": layers}
    if extra:
        header["extra"] = extra
    blob_path.write_bytes(b"".join(blobs))
    header_path.write_text(json.dumps(header, indent=1) + "\n")
    return header_path, blob_path


def load_checkpoint(path) -> SageModel:
    header_path = Path(path).with_suffix(".json")
    header = json.loads(header_path.read_text())
    raw = (header_path.parent / header["blob"]).read_bytes()
    weights = [np.frombuffer(raw[l["offset"]:l["offset"] + l["nbytes"]], dtype="<f8")
               .reshape(l["shape"]).astype(np.float64) for l in header["layers"]]
    return SageModel(weights, header["lr"], header["wd"])
