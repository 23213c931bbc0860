"""Bit-specified output formats: CSV time series, JSON summaries, snapshots.

The CSV schema is frozen (golden-file tested); float formatting is the
shortest round-trip representation, so identical runs produce bit-identical
files on one platform.  Snapshots are raw little-endian float64 payloads in
the documented DoF order (axis-major, then k, j, i) with a JSON sidecar.
"""

from __future__ import annotations

import hashlib
import json
import math
import os

import numpy as np

from .evolution import TimeSeries
from .grid import StaggeredGrid

CSV_HEADER = "t,energy,denergy,dissipation_cum,charge_upsilon,charge_total,split_residual"
SCHEMA_VERSION = 1


class SnapshotError(ValueError):
    """Malformed snapshot pair."""


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    return repr(float(x))


def write_csv(path, series: TimeSeries) -> None:
    lines = [CSV_HEADER]
    for i in range(series.t.size):
        row = (
            series.t[i],
            series.energy[i],
            series.denergy[i],
            series.dissipation_cum[i],
            series.charge_upsilon[i],
            series.charge_total[i],
            series.split_residual[i],
        )
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise SnapshotError(f"unexpected CSV header {header!r}")
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    return np.array(rows)


def config_digest(raw_text: str) -> str:
    return hashlib.sha256(raw_text.encode("utf-8")).hexdigest()[:16]


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    return obj


def write_summary(path, payload: dict) -> None:
    payload = dict(payload)
    payload.setdefault("schema_version", SCHEMA_VERSION)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonify(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


_DOF_COUNT = {
    "edge": lambda g: g.edge_count,
    "face": lambda g: g.face_count,
    "node": lambda g: g.node_count,
    "cell": lambda g: g.cell_count,
}


def write_snapshot(directory, name: str, kind: str, vec: np.ndarray, grid: StaggeredGrid, t: float):
    """Write <name>.json sidecar plus <name>.bin raw payload."""
    if kind not in _DOF_COUNT:
        raise SnapshotError(f"unknown field kind {kind!r}")
    want = _DOF_COUNT[kind](grid)
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (want,):
        raise SnapshotError(f"{kind} snapshot needs {want} values, got shape {vec.shape}")
    header = {
        "schema_version": SCHEMA_VERSION,
        "grid": {"n": grid.n, "length": grid.length},
        "dof_count": int(want),
        "field_kind": kind,
        "time": float(t),
        "byte_order": "little-endian",
        "scalar_width": 8,
        "dof_order": "axis-major, then k, j, i",
    }
    base = os.path.join(directory, name)
    with open(base + ".json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(base + ".bin", "wb") as fh:
        fh.write(vec.astype("<f8").tobytes())
    return base + ".json", base + ".bin"


def read_snapshot(base_path):
    """Read a snapshot pair; returns (header dict, vector)."""
    with open(base_path + ".json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("byte_order") != "little-endian" or header.get("scalar_width") != 8:
        raise SnapshotError("unsupported snapshot encoding")
    with open(base_path + ".bin", "rb") as fh:
        payload = fh.read()
    want = header["dof_count"] * 8
    if len(payload) != want:
        raise SnapshotError(f"payload is {len(payload)} bytes, header declares {want}")
    vec = np.frombuffer(payload, dtype="<f8").astype(float)
    return header, vec
