"""Full-batch training, single process or data-parallel over a simulated cluster.

Every rank holds a replica of the model and the rows of its partition.
Losses are computed at the lowest-rank clone of each labelled vertex, weight
gradients are summed with ``allreduce`` and every replica takes the same SGD
step, so replicas never diverge.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import drpa
from .drpa import ClusterConfig, allreduce, remote_sync, run_epoch_aggregate
from .graph import CsrGraph
from .kernel import SchedSpec, ap_blocked
from .model import SUM, GraphContext, SageModel, backward, forward, loss_grad, sgd_step

TRAIN_ALGOS = ("single",) + drpa.ALGOS
METRICS_HEADER = ("epoch", "loss", "train_acc", "elements_sent")


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "single"
    k: int = 1
    r: int = 0
    lr: float = 0.01
    wd: float = 5e-4
    epochs: int = 20
    seed: int = 0
    hidden: tuple = (16, 16)
    slack: float = 1.1
    block_size: Optional[int] = None
    workers: int = 1
    loss_owner: str = "lowest-rank"

    def __post_init__(self):
        if self.algo not in TRAIN_ALGOS:
            raise ValueError(f"algo must be one of {TRAIN_ALGOS}, got {self.algo!r}")
        if self.algo == "single" and self.k != 1:
            raise ValueError("algo 'single' requires k=1")
        if self.k < 1 or self.r < 0 or self.epochs < 0:
            raise ValueError("need k >= 1, r >= 0, epochs >= 0")
        if self.loss_owner != "lowest-rank":
            raise ValueError("only the lowest-rank loss owner policy is supported")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    elements_sent: int
    seconds: float


@dataclass
class TrainResult:
    config: TrainConfig
    metrics: list = field(default_factory=list)
    model: Optional[SageModel] = None
    cluster: Optional[drpa.Cluster] = None

    def losses(self) -> np.ndarray:
        return np.array([m.loss for m in self.metrics])

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for m in self.metrics:
            w.writerow([m.epoch, repr(float(m.loss)), repr(float(m.train_acc)), int(m.elements_sent)])
        return buf.getvalue()

    def mean_epoch_time(self, first: int, last: int) -> Optional[float]:
        """Mean wall time over 1-based epochs ``first..last`` inclusive."""
        sel = [m.seconds for m in self.metrics if first <= m.epoch + 1 <= last]
        return float(np.mean(sel)) if sel else None


class DistContext:
    """Per-rank replicas and bookkeeping for data-parallel training."""

    def __init__(self, cluster: drpa.Cluster, algo: str, models: list[SageModel],
                 labels: np.ndarray, train_mask: np.ndarray):
        self.cluster = cluster
        self.algo = algo
        self.models = models
        seen = np.zeros(cluster.num_vertices, dtype=bool)
        self.owner_masks = []
        self.labels = []
        for rk in cluster.ranks:
            first = ~seen[rk.l2g]
            seen[rk.l2g] = True
            self.owner_masks.append(first & train_mask[rk.l2g])
            self.labels.append(labels[rk.l2g])
        self.total_owned = int(sum(m.sum() for m in self.owner_masks))
        # 0c never sees remote neighbours, so it normalises by the local in-degree
        self.degs = [rk.local_deg if algo == "0c" else rk.global_deg for rk in cluster.ranks]

    @property
    def syncs_backward(self) -> bool:
        return self.algo == "cd-0" or (self.algo == "cd-r" and self.cluster.config.r == 0)

    def forward(self, xs: list[np.ndarray], epoch: int) -> list[np.ndarray]:
        hs = [np.asarray(x, dtype=np.float64) for x in xs]
        for layer in range(self.models[0].num_layers):
            aggs = run_epoch_aggregate(self.cluster, self.algo, epoch, layer, hs, SUM)
            hs = [m.forward_layer(layer, a, h, deg)
                  for m, a, h, deg in zip(self.models, aggs, hs, self.degs)]
        return hs

    def backward(self, dlogits: list[np.ndarray], epoch: int) -> list[np.ndarray]:
        n_layers = self.models[0].num_layers
        dhs = dlogits
        for layer in reversed(range(n_layers)):
            ss = [m.backward_layer(layer, dh) for m, dh in zip(self.models, dhs)]
            dagg = [s.copy() for s in ss]
            if self.syncs_backward:
                # adjoint of the forward reduce+broadcast is again reduce+broadcast;
                # the self term keeps each clone's own unsynced gradient
                remote_sync(self.cluster, "cd-0", epoch, n_layers + layer, dagg, SUM)
            dhs = [ap_blocked(rk.plan_t, a, None, SUM, self.cluster.sched) + s
                   for rk, a, s in zip(self.cluster.ranks, dagg, ss)]
        return dhs

    def sync_grads(self) -> list[np.ndarray]:
        summed = []
        for layer in range(self.models[0].num_layers):
            per_rank = allreduce(self.cluster, [m.grads[layer] for m in self.models])
            for m, g in zip(self.models, per_rank):
                m.grads[layer] = g
            summed.append(per_rank[0])
        return summed


def _accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[int, int]:
    if not mask.any():
        return 0, 0
    return int((logits[mask].argmax(axis=1) == labels[mask]).sum()), int(mask.sum())


def train(config: TrainConfig, graph: CsrGraph, features: np.ndarray, labels: np.ndarray,
          train_mask: Optional[np.ndarray] = None, cluster_kwargs: Optional[dict] = None) -> TrainResult:
    labels = np.asarray(labels, dtype=np.int64)
    if train_mask is None:
        train_mask = labels >= 0
    train_mask = np.asarray(train_mask, dtype=bool) & (labels >= 0)
    n_classes = int(labels.max()) + 1
    dims = [features.shape[1], *config.hidden, n_classes]
    base = SageModel.init(dims, config.seed, lr=config.lr, wd=config.wd)
    sched = SchedSpec(workers=config.workers)
    result = TrainResult(config)

    if config.algo == "single":
        ctx = GraphContext(graph, config.block_size, sched)
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            logits = forward(base, ctx, features)
            loss, dlogits = loss_grad(logits, labels, train_mask)
            backward(base, ctx, dlogits)
            sgd_step(base)
            hit, tot = _accuracy(logits, labels, train_mask)
            result.metrics.append(EpochMetrics(epoch, loss, hit / tot, 0, time.perf_counter() - t0))
        result.model = base
        return result

    cfg = ClusterConfig(config.k, config.algo, config.r, config.seed)
    kwargs = {"sched": sched, "block_size": config.block_size, **(cluster_kwargs or {})}
    cluster = drpa.build_cluster(graph.edges(), graph.num_vertices, cfg, config.slack, **kwargs)
    dctx = DistContext(cluster, config.algo, [base.copy() for _ in range(config.k)], labels, train_mask)
    if dctx.total_owned == 0:
        raise ValueError("no labelled training vertex")
    xs = cluster.scatter_features(np.asarray(features, dtype=np.float64))
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        sent_before = drpa.volume(cluster)
        logits = dctx.forward(xs, epoch)
        parts = [loss_grad(lg, lb, om, normalizer=dctx.total_owned)
                 for lg, lb, om in zip(logits, dctx.labels, dctx.owner_masks)]
        loss = float(allreduce(cluster, [np.array([p[0]]) for p in parts])[0][0])
        dctx.backward([p[1] for p in parts], epoch)
        dctx.sync_grads()
        for m in dctx.models:
            sgd_step(m)
        acc = np.array([_accuracy(lg, lb, om) for lg, lb, om in zip(logits, dctx.labels, dctx.owner_masks)])
        hit, tot = allreduce(cluster, list(acc))[0]
        result.metrics.append(EpochMetrics(epoch, loss, float(hit / tot), drpa.volume(cluster) - sent_before,
                                           time.perf_counter() - t0))
    result.model = dctx.models[0]
    result.cluster = cluster
    return result


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
