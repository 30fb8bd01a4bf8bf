"""On-disk formats: binary field snapshots, front CSV and JSON summaries.

Snapshot layout (little-endian):

    offset  size  content
    0       4     magic b"KSNP"
    4       2     format version (uint16)
    6       2     dim (uint16)
    8       1     boundary code (0 Neumann, 1 periodic)
    9       1     number of fields (2: u, v; 4: u, v, u_next, v_next)
    10      2     reserved
    12      12    points per axis, 3 x uint32 (unused axes 0)
    24      8     time (float64)
    32      8     time step to the paired next state, 0 if none (float64)
    40      8     step index (uint64)
    48      16    reserved
    64      16*dim  axis table: (lo, hi) float64 per axis
    ...     8*prod(n)*nfields  float64 values, row-major, field by field
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import Boundary, Field, Grid, State

MAGIC = b"KSNP"
VERSION = 1
HEADER = struct.Struct("<4sHHBB2x3IddQ16x")
assert HEADER.size == 64
_BOUNDARY_CODES = {Boundary.NEUMANN: 0, Boundary.PERIODIC: 1}


class SnapshotError(ValueError):
    pass


@dataclass
class Snapshot:
    state: State
    next_state: State | None = None
    step: int = 0


def encode_snapshot(state: State, next_state: State | None = None, step: int = 0) -> bytes:
    grid = state.grid
    n = list(grid.n) + [0] * (3 - grid.dim)
    fields = [state.u.values, state.v.values]
    dt_next = 0.0
    if next_state is not None:
        fields += [next_state.u.values, next_state.v.values]
        dt_next = next_state.t - state.t
    head = HEADER.pack(MAGIC, VERSION, grid.dim, _BOUNDARY_CODES[grid.boundary], len(fields),
                       *n, float(state.t), float(dt_next), int(step))
    axes = struct.pack(f"<{2 * grid.dim}d", *[x for pair in zip(grid.lo, grid.hi) for x in pair])
    body = b"".join(np.ascontiguousarray(f, dtype="<f8").tobytes() for f in fields)
    return head + axes + body


def decode_snapshot(blob: bytes) -> Snapshot:
    if len(blob) < HEADER.size:
        raise SnapshotError("truncated header")
    magic, version, dim, bcode, nfields, n0, n1, n2, t, dt_next, step = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported version {version}")
    if not 1 <= dim <= 3 or nfields not in (2, 4):
        raise SnapshotError("corrupt header")
    n = (n0, n1, n2)[:dim]
    off = HEADER.size
    table = struct.unpack_from(f"<{2 * dim}d", blob, off)
    off += 16 * dim
    boundary = Boundary.NEUMANN if bcode == 0 else Boundary.PERIODIC
    grid = Grid(table[0::2], table[1::2], n, boundary)
    size = int(np.prod(n))
    expected = off + 8 * size * nfields
    if len(blob) != expected:
        raise SnapshotError(f"expected {expected} bytes, found {len(blob)}")
    arrays = [np.frombuffer(blob, dtype="<f8", count=size, offset=off + 8 * size * k).reshape(n).copy()
              for k in range(nfields)]
    state = State(Field(grid, arrays[0]), Field(grid, arrays[1]), t)
    nxt = None
    if nfields == 4:
        nxt = State(Field(grid, arrays[2]), Field(grid, arrays[3]), t + dt_next)
    return Snapshot(state, nxt, step)


def write_snapshot(path: Path, state: State, next_state: State | None = None, step: int = 0):
    Path(path).write_bytes(encode_snapshot(state, next_state, step))


def read_snapshot(path: Path) -> Snapshot:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise SnapshotError(f"cannot read {path}: {exc}") from exc
    return decode_snapshot(blob)


def fmt(x) -> str:
    """Shortest round-trip text for CSV fields."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


FRONT_COLUMNS = ["t", "threshold", "direction", "position", "trusted"]


def write_csv(path: Path, columns: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue())


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def write_json(path: Path, obj) -> None:
    Path(path).write_text(dumps(obj))
