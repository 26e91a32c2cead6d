"""Run artifacts: snapshots, metrics CSV, oracle polylines and saved states."""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .anisotropy import Anisotropy
from .errors import GridMismatchError
from .gridset import BinarySet, GridDomain
from .stepper import FlatFlowState, StepRecord

__all__ = [
    "METRICS_VERSION",
    "METRIC_COLUMNS",
    "snapshot_name",
    "write_snapshot",
    "read_snapshot",
    "write_pgm",
    "read_pgm",
    "write_bitfield",
    "read_bitfield",
    "write_metrics",
    "read_metrics",
    "write_polyline",
    "read_polyline",
    "save_state",
    "load_state",
    "write_report",
]

METRICS_VERSION = 1
METRIC_COLUMNS = ("k", "t", "volume", "perimeter_phi", "adhesion", "capillary", "dissipation", "forcing",
                  "mincut_value", "ms")
_MAGIC = b"DFB3"
_HEADER = struct.Struct("<4sI3Id4x")


def snapshot_name(tau: float, k: int, dim: int = 2) -> str:
    return f"E_tau{tau:g}_k{k}." + ("pgm" if dim == 2 else "bits")


def write_pgm(path: str | Path, E: BinarySet):
    """Binary P5 image, top row = top of the box, 255 = occupied."""
    img = np.where(E.cells.T[::-1], 255, 0).astype(np.uint8)
    ny, nx = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path: str | Path, grid: GridDomain) -> BinarySet:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    nx, ny, maxval = (int(t) for t in tokens[1:])
    if (nx, ny) != grid.counts:
        raise GridMismatchError(f"{path}: image is {nx}x{ny}, grid is {grid.counts}")
    img = np.frombuffer(data[pos + 1 : pos + 1 + nx * ny], np.uint8).reshape(ny, nx)
    return BinarySet(grid, (img[::-1].T > maxval // 2))


def write_bitfield(path: str | Path, E: BinarySet):
    """32-byte header (magic, n, counts, h) followed by little-endian packed bits in C order."""
    g = E.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.n, *g.counts, g.h))
        fh.write(np.packbits(E.cells.ravel(), bitorder="little").tobytes())


def read_bitfield(path: str | Path, grid: GridDomain) -> BinarySet:
    data = Path(path).read_bytes()
    magic, n, a, b, c, h = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic")
    if (n, (a, b, c)) != (grid.n, grid.counts) or abs(h - grid.h) > 1e-12 * grid.h:
        raise GridMismatchError(f"{path}: header does not match the grid")
    bits = np.unpackbits(np.frombuffer(data[_HEADER.size :], np.uint8), count=grid.size, bitorder="little")
    return BinarySet(grid, bits.astype(bool).reshape(grid.counts))


def write_snapshot(directory: str | Path, E: BinarySet, tau: float, k: int) -> Path:
    path = Path(directory) / snapshot_name(tau, k, E.grid.n)
    (write_pgm if E.grid.n == 2 else write_bitfield)(path, E)
    return path


def read_snapshot(path: str | Path, grid: GridDomain) -> BinarySet:
    path = Path(path)
    return read_pgm(path, grid) if grid.n == 2 else read_bitfield(path, grid)


def write_metrics(path: str | Path, rows, extra: dict | None = None):
    """Metrics CSV; ``rows`` are StepRecords or dicts with the fixed columns."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# dropletflow metrics v{METRICS_VERSION}\n")
        for k, v in (extra or {}).items():
            fh.write(f"# {k} = {v}\n")
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            d = r if isinstance(r, dict) else vars(r)
            w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in METRIC_COLUMNS])


def read_metrics(path: str | Path) -> dict:
    """Columns of a metrics CSV as arrays; the header comments go under ``"meta"``."""
    meta = {}
    with open(path) as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].split("=", 1)
                meta[k.strip()] = v.strip()
            elif "metrics v" in line:
                meta["version"] = int(line.rsplit("v", 1)[1])
        else:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    cols = {c: [] for c in header}
    for row in reader:
        for c, v in zip(header, row):
            cols[c].append(float(v))
    out = {c: np.array(v) for c, v in cols.items()}
    out["meta"] = meta
    return out


def write_polyline(path: str | Path, points: np.ndarray, t: float):
    with open(path, "w") as fh:
        fh.write(f"# t = {float(t)!r}\n")
        np.savetxt(fh, np.asarray(points), fmt="%.17g", delimiter=",")


def read_polyline(path: str | Path) -> tuple[float, np.ndarray]:
    with open(path) as fh:
        t = float(fh.readline().split("=", 1)[1])
        return t, np.loadtxt(fh, delimiter=",", ndmin=2)


def save_state(path: str | Path, state: FlatFlowState, meta: dict | None = None):
    """Everything needed to rerun the checks on a finished flat flow."""
    segs = state.segments
    seg_index = np.array([-1 if s is None else len(s) for s in segs])
    seg_data = np.concatenate([s for s in segs if s is not None]) if any(s is not None for s in segs) else np.zeros((0, 2, 2))
    rec = {f: np.array([getattr(r, f) for r in state.records]) for f in StepRecord.__dataclass_fields__}
    np.savez_compressed(
        path,
        packed=np.stack(state.packed),
        seg_index=seg_index,
        seg_data=seg_data,
        tau=state.tau,
        scale=state.scale,
        counts=np.array(state.grid.counts),
        h=state.grid.h,
        lower=np.array(state.grid.lower),
        truncated=state.truncated,
        extinct_at=-1 if state.extinct_at is None else state.extinct_at,
        meta=json.dumps({"select": state.select, "interface": state.interface, **(meta or {})}),
        **{f"rec_{k}": v for k, v in rec.items()},
    )


def load_state(path: str | Path, phi: Anisotropy, beta, forcing, stencil=None) -> FlatFlowState:
    """Inverse of save_state; the data fields are rebuilt from the configuration."""
    from .stepper import _as_beta, _as_forcing, default_stencil

    z = np.load(path)
    grid = GridDomain(tuple(int(c) for c in z["counts"]), float(z["h"]), tuple(z["lower"]))
    meta = json.loads(str(z["meta"]))
    state = FlatFlowState(float(z["tau"]), grid, phi, stencil or default_stencil(phi), _as_beta(beta, phi),
                          _as_forcing(forcing), meta["select"], meta["interface"], float(z["scale"]))
    state.packed = list(z["packed"])
    pos = 0
    for m in z["seg_index"]:
        if m < 0:
            state.segments.append(None)
        else:
            state.segments.append(z["seg_data"][pos : pos + m])
            pos += m
    names = list(StepRecord.__dataclass_fields__)
    cols = [z[f"rec_{f}"] for f in names]
    for vals in zip(*cols):
        state.records.append(StepRecord(*[v.item() for v in vals]))
    state.truncated = bool(z["truncated"])
    ext = int(z["extinct_at"])
    state.extinct_at = None if ext < 0 else ext
    return state


def write_report(path: str | Path, reports):
    """CSV with one row per reported metric: check, status, metric, value, threshold."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "status", "metric", "value", "threshold"])
        for r in reports:
            for row in r.rows():
                w.writerow(row)
