"""On-disk formats: edge lists and raw feature matrices with a JSON sidecar."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i64": np.dtype("<i8")}
_NAMES = {v.newbyteorder("="): k for k, v in _DTYPES.items()}


def read_edge_list(path) -> np.ndarray:
    """Read ``src dst`` lines into an ``(E, 2)`` int64 array. ``#`` lines are comments."""
    rows = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'src dst', got {line!r}")
            rows.append((int(parts[0]), int(parts[1])))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def write_edge_list(path, edges, header: str | None = None) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for s, d in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
            fh.write(f"{s} {d}\n")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_features(path, arr: np.ndarray) -> None:
    """Write ``arr`` as raw little-endian data plus ``<path>.json`` sidecar."""
    path = Path(path)
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    name = _NAMES.get(arr.dtype)
    if name is None:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    path.write_bytes(np.ascontiguousarray(arr, dtype=_DTYPES[name]).tobytes())
    meta = {"rows": int(arr.shape[0]), "cols": int(arr.shape[1]), "dtype": name}
    _sidecar(path).write_text(json.dumps(meta) + "\n")


def read_features(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    dt = _DTYPES[meta["dtype"]]
    data = np.frombuffer(path.read_bytes(), dtype=dt)
    rows, cols = int(meta["rows"]), int(meta["cols"])
    if data.size != rows * cols:
        raise ValueError(f"{path}: {data.size} elements, sidecar says {rows}x{cols}")
    return data.reshape(rows, cols).astype(dt.newbyteorder("="))


def read_labels(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.int64, ndmin=1)


def write_labels(path, labels) -> None:
    np.savetxt(path, np.asarray(labels, dtype=np.int64), fmt="%d")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
