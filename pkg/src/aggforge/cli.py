"""``aggforge`` command line: gen, partition, aggregate, train, estimate.

Settings come from built-in defaults, then ``--config`` (JSON), then explicit
flags. Every run that gets past argument parsing leaves one ``manifest.json``
in ``--out``. Exit codes: 0 ok, 2 usage or input error, 3 failed ``--check``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import drpa
from .estimators import estimate_memory, estimate_work
from .generators import GenSpec, generate_edges, generate_features, generate_labels
from .graph import CsrGraph, GraphError, OperatorSpec, ap_reference, build_csr, combine
from .io import (read_edge_list, read_features, read_labels, sha256_file, write_edge_list,
                 write_features, write_labels)
from .kernel import SchedSpec, ap_blocked, plan_blocks
from .kernel.traffic import sweep_blocks, sweep_to_csv
from .model import save_checkpoint
from .partition import (build_split_trees, build_vertex_map, libra_partition, partition_stats,
                        write_partition_dir)
from .training import TrainConfig, config_dict, train

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 2, 3


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


def _env_workers() -> int:
    return int(os.environ.get("AGGFORGE_WORKERS", "1"))


DEFAULTS = {
    "gen": {"kind": "erdos_renyi", "n": 100, "p": 0.05, "m": 2, "blocks": "100,100",
            "p_in": 0.1, "p_out": 0.01, "duplicate": True, "feat_dim": 16, "dtype": "f64"},
    "partition": {"graph": None, "num_vertices": None, "k": 2, "slack": 1.1},
    "aggregate": {"graph": None, "features": None, "edge_features": None, "num_vertices": None,
                  "op": "copylhs,sum", "sizes": None, "cache_bytes": 1 << 20, "workers": None,
                  "chunk": 64, "baseline": False, "check": False},
    "train": {"graph": None, "features": None, "labels": None, "algo": "single", "k": 1, "r": 0,
              "lr": 0.01, "wd": 5e-4, "epochs": 20, "hidden": "16,16", "slack": 1.1,
              "block_size": None, "workers": None},
    "estimate": {"work": None, "memory": None},
}


# -- parsing helpers ------------------------------------------------------------

def _int_list(v, name) -> list[int]:
    if isinstance(v, (list, tuple)):
        items = v
    else:
        items = [s for s in str(v).replace(";", ",").split(",") if s.strip()]
    try:
        return [int(x) for x in items]
    except (TypeError, ValueError):
        raise UsageError(f"{name}: expected comma-separated integers, got {v!r}") from None


def _hops(v) -> list[tuple]:
    if isinstance(v, str):
        try:
            v = json.loads(v)
        except json.JSONDecodeError:
            v = [h.split(",") for h in v.split(";") if h.strip()]
    try:
        hops = [(float(n), float(d), float(f)) for n, d, f in v]
    except (TypeError, ValueError):
        raise UsageError(f"work: expected hops as n,deg,feat[;...], got {v!r}") from None
    if not hops:
        raise UsageError("work: no hops given")
    return hops


def _require(cfg: dict, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"missing required setting --{k.replace('_', '-')}")


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _load_graph(path, num_vertices: Optional[int]) -> CsrGraph:
    edges = read_edge_list(_existing(path))
    n = num_vertices if num_vertices is not None else (int(edges.max()) + 1 if edges.size else 0)
    return build_csr(edges, int(n))


# -- commands -------------------------------------------------------------------
# each returns (outputs relative to out dir, inputs, extra manifest fields)

def cmd_gen(cfg: dict, out: Path):
    kind = cfg["kind"]
    spec = GenSpec(kind=kind, n=int(cfg["n"]), p=float(cfg["p"]), m=int(cfg["m"]),
                   blocks=tuple(_int_list(cfg["blocks"], "blocks")) if kind == "sbm" else (),
                   p_in=float(cfg["p_in"]), p_out=float(cfg["p_out"]), seed=int(cfg["seed"]),
                   duplicate=bool(cfg["duplicate"]), feat_dim=int(cfg["feat_dim"]),
                   features_dtype=cfg["dtype"])
    if cfg["dtype"] not in ("f32", "f64"):
        raise UsageError("dtype must be f32 or f64")
    edges = generate_edges(spec)
    write_edge_list(out / "edges.txt", edges,
                    header=f"{kind} n={spec.num_vertices} seed={spec.seed} duplicate={spec.duplicate}")
    write_features(out / "features.bin", generate_features(spec))
    outputs = ["edges.txt", "features.bin", "features.bin.json"]
    labels = generate_labels(spec)
    if labels is not None:
        write_labels(out / "labels.txt", labels)
        outputs.append("labels.txt")
    return outputs, [], {"num_vertices": spec.num_vertices, "num_edges": int(len(edges))}


def cmd_partition(cfg: dict, out: Path):
    _require(cfg, "graph")
    edges = read_edge_list(_existing(cfg["graph"]))
    n = cfg["num_vertices"]
    n = int(n) if n is not None else (int(edges.max()) + 1 if edges.size else 0)
    ps = libra_partition(edges, n, int(cfg["k"]), float(cfg["slack"]))
    vm = build_vertex_map(ps)
    forest = build_split_trees(vm, int(cfg["seed"]))
    write_partition_dir(out / "partitions", ps, vm, forest)
    stats = partition_stats(ps)
    (out / "stats.json").write_text(json.dumps(stats, indent=1) + "\n")
    outputs = ["stats.json", "partitions/meta.json"]
    for p in range(ps.k):
        outputs += [f"partitions/part-{p}/edges.txt", f"partitions/part-{p}/l2g.txt"]
    return outputs, [cfg["graph"]], {"stats": stats}


def _outputs_match(g: CsrGraph, fV, fE, spec: OperatorSpec, got: np.ndarray, ref: np.ndarray) -> bool:
    """Bitwise for integers and max/min; otherwise a bound scaled by the message magnitudes."""
    if got.shape != ref.shape or got.dtype != ref.dtype:
        return False
    if got.dtype.kind in "iu" or spec.reduce != "sum":
        return np.array_equal(got, ref)
    src = g.col_idx
    msgs = combine(spec, fV[src] if spec.uses_vertex else None, fE[g.edge_id] if spec.uses_edge else None)
    scale = np.zeros(ref.shape, dtype=np.float64)
    np.add.at(scale, g.destinations(), np.abs(msgs.astype(np.float64)))
    deg = np.diff(g.row_ptr)[:, None]
    tol = 4.0 * np.finfo(ref.dtype).eps * np.maximum(deg, 1) * scale
    return bool(np.all(np.abs(got.astype(np.float64) - ref.astype(np.float64)) <= tol))


def cmd_aggregate(cfg: dict, out: Path):
    _require(cfg, "graph")
    try:
        spec = OperatorSpec.parse(cfg["op"])
    except ValueError as e:
        raise UsageError(str(e)) from None
    inputs = [cfg["graph"]]
    fV = fE = None
    if spec.uses_vertex:
        _require(cfg, "features")
        fV = read_features(_existing(cfg["features"]))
        inputs.append(cfg["features"])
    if spec.uses_edge:
        _require(cfg, "edge_features")
        fE = read_features(_existing(cfg["edge_features"]))
        inputs.append(cfg["edge_features"])
    n = cfg["num_vertices"]
    if n is None and fV is not None:
        n = fV.shape[0]
    g = _load_graph(cfg["graph"], n)
    sizes = _int_list(cfg["sizes"], "sizes") if cfg["sizes"] is not None else [max(1, g.num_vertices)]
    if not sizes or min(sizes) < 1:
        raise UsageError("sizes must be positive integers")
    workers = int(cfg["workers"]) if cfg["workers"] is not None else _env_workers()
    sched = SchedSpec(workers=workers, chunk=int(cfg["chunk"]))

    rows = sweep_blocks(g, fV, spec, sizes, int(cfg["cache_bytes"]), fE=fE, sched=sched)
    result = ap_blocked(plan_blocks(g, sizes[0]), fV, fE, spec, sched)
    write_features(out / "aggregate.bin", result)
    extra, info = [], {"backend": _backend(), "workers": workers}
    if cfg["baseline"] or cfg["check"]:
        t0 = time.perf_counter_ns()
        ref = ap_reference(g, fV, fE, spec)
        wall = time.perf_counter_ns() - t0
        if cfg["baseline"]:
            extra.append(["reference", "", "", "", "", "", wall])
        if cfg["check"]:
            ok = all(_outputs_match(g, fV, fE, spec, ap_blocked(plan_blocks(g, B), fV, fE, spec, sched), ref)
                     for B in sizes)
            info["check"] = "pass" if ok else "fail"
    (out / "sweep.csv").write_text(sweep_to_csv(rows, extra))
    info["aggregate_sha256"] = sha256_file(out / "aggregate.bin")
    return ["sweep.csv", "aggregate.bin", "aggregate.bin.json"], inputs, info


def _backend() -> str:
    from . import kernel
    return kernel.BACKEND


def cmd_train(cfg: dict, out: Path):
    _require(cfg, "graph", "features", "labels")
    x = read_features(_existing(cfg["features"])).astype(np.float64)
    labels = read_labels(_existing(cfg["labels"]))
    if len(labels) != x.shape[0]:
        raise UsageError(f"{len(labels)} labels for {x.shape[0]} feature rows")
    g = _load_graph(cfg["graph"], x.shape[0])
    tc = TrainConfig(algo=cfg["algo"], k=int(cfg["k"]), r=int(cfg["r"]), lr=float(cfg["lr"]),
                     wd=float(cfg["wd"]), epochs=int(cfg["epochs"]), seed=int(cfg["seed"]),
                     hidden=tuple(_int_list(cfg["hidden"], "hidden")), slack=float(cfg["slack"]),
                     block_size=None if cfg["block_size"] is None else int(cfg["block_size"]),
                     workers=int(cfg["workers"]) if cfg["workers"] is not None else _env_workers())
    res = train(tc, g, x, labels)
    (out / "metrics.csv").write_text(res.metrics_csv())
    save_checkpoint(out / "model", res.model, extra={"train_config": config_dict(tc)})
    outputs = ["metrics.csv", "model.json", "model.bin"]
    if res.cluster is not None:
        (out / "runlog.csv").write_text(drpa.comm_report_csv(res.cluster))
        outputs.append("runlog.csv")
    summary = {
        "epochs": tc.epochs,
        "final_loss": res.metrics[-1].loss if res.metrics else None,
        "mean_epoch_seconds_1_10": res.mean_epoch_time(1, 10),
        "mean_epoch_seconds_10_20": res.mean_epoch_time(10, 20),
        "elements_sent": int(sum(m.elements_sent for m in res.metrics)),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    outputs.append("summary.json")
    return outputs, [cfg["graph"], cfg["features"], cfg["labels"]], {"summary": summary}


def cmd_estimate(cfg: dict, out: Path):
    if cfg["work"] is None and cfg["memory"] is None:
        raise UsageError("estimate needs --work and/or --memory")
    report = {}
    if cfg["work"] is not None:
        try:
            w = estimate_work(_hops(cfg["work"]))
        except ValueError as e:
            raise UsageError(str(e)) from None
        report["work"] = {"per_hop_billion_ops": list(w.per_hop), "total_billion_ops": w.total}
    if cfg["memory"] is not None:
        dims = _int_list(cfg["memory"], "memory")
        if len(dims) != 5:
            raise UsageError("memory: expected N,f,h1,h2,l")
        try:
            report["memory"] = estimate_memory(*dims)
        except ValueError as e:
            raise UsageError(str(e)) from None
    (out / "estimate.json").write_text(json.dumps(report, indent=1) + "\n")
    print(json.dumps(report))
    return ["estimate.json"], [], {}


COMMANDS = {"gen": cmd_gen, "partition": cmd_partition, "aggregate": cmd_aggregate,
            "train": cmd_train, "estimate": cmd_estimate}


# -- argument parser --------------------------------------------------------------

def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {v!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="RNG seed (default 0)")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--config", help="JSON file of settings; flags override it")

    p = argparse.ArgumentParser(prog="aggforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, argument_default=argparse.SUPPRESS)

    g = add("gen", "generate a synthetic graph with features (and SBM labels)")
    g.add_argument("--kind", choices=["erdos_renyi", "barabasi_albert", "sbm"])
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=float)
    g.add_argument("--m", type=int)
    g.add_argument("--blocks", help="SBM block sizes, e.g. 100,100")
    g.add_argument("--p-in", dest="p_in", type=float)
    g.add_argument("--p-out", dest="p_out", type=float)
    g.add_argument("--duplicate", type=_bool, help="emit both directions of each edge (default true)")
    g.add_argument("--feat-dim", dest="feat_dim", type=int)
    g.add_argument("--dtype", choices=["f32", "f64"])

    pt = add("partition", "vertex-cut partition an edge list")
    pt.add_argument("--graph")
    pt.add_argument("--num-vertices", dest="num_vertices", type=int)
    pt.add_argument("--k", type=int)
    pt.add_argument("--slack", type=float)

    a = add("aggregate", "run and model the blocked aggregation over block sizes")
    a.add_argument("--graph")
    a.add_argument("--features")
    a.add_argument("--edge-features", dest="edge_features")
    a.add_argument("--num-vertices", dest="num_vertices", type=int)
    a.add_argument("--op", help="binary,reduce e.g. mul,sum")
    a.add_argument("--sizes", help="block sizes, e.g. 1024,4096")
    a.add_argument("--cache-bytes", dest="cache_bytes", type=int)
    a.add_argument("--workers", type=int)
    a.add_argument("--chunk", type=int)
    a.add_argument("--baseline", action="store_true", help="add a row timing the reference kernel")
    a.add_argument("--check", action="store_true", help="verify blocked output against the reference")

    t = add("train", "full-batch GraphSAGE training, single process or simulated cluster")
    t.add_argument("--graph")
    t.add_argument("--features")
    t.add_argument("--labels")
    t.add_argument("--algo")
    t.add_argument("--k", type=int)
    t.add_argument("--r", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--wd", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--hidden", help="hidden widths, e.g. 16,16")
    t.add_argument("--slack", type=float)
    t.add_argument("--block-size", dest="block_size", type=int)
    t.add_argument("--workers", type=int)

    e = add("estimate", "aggregation work and memory estimates")
    e.add_argument("--work", help="hops as n,deg,feat;n,deg,feat or a JSON list")
    e.add_argument("--memory", help="N,f,h1,h2,l")
    return p


def _resolve(command: str, ns: dict) -> dict:
    cfg = {"seed": 0, **DEFAULTS[command]}
    if "config" in ns:
        try:
            from_file = json.loads(_existing(ns["config"]).read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"{ns['config']}: invalid JSON ({e})") from None
        if not isinstance(from_file, dict):
            raise UsageError(f"{ns['config']}: expected a JSON object")
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise UsageError(f"{ns['config']}: unknown keys {sorted(unknown)}")
        cfg.update(from_file)
    cfg.update({k: v for k, v in ns.items() if k in cfg})
    return cfg


def _write_manifest(out: Path, command: str, argv, cfg: dict, inputs, outputs, extra: dict,
                    status: str, wall: float) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "status": status,
        "config": cfg,
        "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
        "outputs": {o: sha256_file(out / o) for o in outputs if (out / o).is_file()},
        "wall_time_seconds": wall,
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str) + "\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = vars(build_parser().parse_args(argv))
    except SystemExit as e:
        return int(e.code or 0)
    command = ns.pop("command")
    out = Path(ns.pop("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    cfg, inputs, outputs, extra, status, code = dict(ns), [], [], {}, "ok", EXIT_OK
    try:
        cfg = _resolve(command, ns)
        outputs, inputs, extra = COMMANDS[command](cfg, out)
        if extra.get("check") == "fail":
            status, code = "check-failed", EXIT_CHECK
            print("aggforge: blocked output does not match the reference", file=sys.stderr)
    except (UsageError, GraphError, ValueError, ZeroDivisionError, OSError) as e:
        status, code = "error", EXIT_USAGE
        extra = {"error": f"{type(e).__name__}: {e}"}
        print(f"aggforge {command}: {e}", file=sys.stderr)
    _write_manifest(out, command, argv, cfg, inputs, outputs, extra, status, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
