"""
Binary field snapshots with a JSON sidecar.

Layout (all little-endian)::

    magic     4s   b"DHMS"
    version   u16
    topology  u8   0 = torus, 1 = rectangle
    kind      u8   0 = scalar, 1 = map, 2 = spinor, 3 = pair (map then spinor)
    Lx, Ly    f64
    x0, y0    f64
    nx, ny    u32
    n         u32  target sphere dimension (components K = n + 1)

followed by the payload as row-major float64. Complex spinor entries are
stored as ``(re, im)`` pairs. ``<file>.json`` mirrors the header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dhmlab.errors import SnapshotFormatError
from dhmlab.grid import Grid, make_grid

MAGIC = b"DHMS"
VERSION = 1
_HEADER = struct.Struct("<4sHBBddddIII")
_TOPOLOGY_CODES = {"torus": 0, "rectangle": 1}
_KIND_CODES = {"scalar": 0, "map": 1, "spinor": 2, "pair": 3}


@dataclass
class Snapshot:
    grid: Grid
    n: int
    kind: str
    scalar: np.ndarray | None = None
    phi: np.ndarray | None = None
    psi: np.ndarray | None = None


def _header_dict(grid: Grid, n: int, kind: str) -> dict:
    return {
        "format": "dhmlab-snapshot",
        "version": VERSION,
        "topology": grid.topology,
        "Lx": grid.lx,
        "Ly": grid.ly,
        "x0": grid.x0,
        "y0": grid.y0,
        "nx": grid.nx,
        "ny": grid.ny,
        "n": n,
        "kind": kind,
        "dtype": "<f8",
        "order": "C",
    }


def write_snapshot(
    path,
    grid: Grid,
    *,
    phi: np.ndarray | None = None,
    psi: np.ndarray | None = None,
    scalar: np.ndarray | None = None,
    n: int | None = None,
) -> Path:
    """Write a snapshot and its sidecar; returns the binary path."""
    path = Path(path)
    if scalar is not None:
        if phi is not None or psi is not None:
            raise ValueError("a scalar snapshot cannot also hold map or spinor data")
        kind = "scalar"
        n = 0 if n is None else n
    elif phi is not None and psi is not None:
        kind = "pair"
    elif phi is not None:
        kind = "map"
    elif psi is not None:
        kind = "spinor"
    else:
        raise ValueError("nothing to write")

    if kind != "scalar":
        k = (phi if phi is not None else psi).shape[2]
        n = k - 1

    chunks = []
    if scalar is not None:
        chunks.append(np.ascontiguousarray(scalar, dtype="<f8"))
    if phi is not None:
        chunks.append(np.ascontiguousarray(phi, dtype="<f8"))
    if psi is not None:
        psi = np.ascontiguousarray(psi, dtype="<c16")
        chunks.append(psi.view("<f8"))

    header = _HEADER.pack(
        MAGIC, VERSION, _TOPOLOGY_CODES[grid.topology], _KIND_CODES[kind],
        grid.lx, grid.ly, grid.x0, grid.y0, grid.nx, grid.ny, n,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        for c in chunks:
            fh.write(c.tobytes(order="C"))
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(_header_dict(grid, n, kind), indent=2, sort_keys=True) + "\n")
    return path


def read_snapshot(path) -> Snapshot:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotFormatError(f"{path}: truncated header")
    magic, version, topo, kind, lx, ly, x0, y0, nx, ny, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotFormatError(f"{path}: unsupported version {version}")
    topology = {v: k for k, v in _TOPOLOGY_CODES.items()}.get(topo)
    kind_name = {v: k for k, v in _KIND_CODES.items()}.get(kind)
    if topology is None or kind_name is None:
        raise SnapshotFormatError(f"{path}: bad topology/kind code {topo}/{kind}")

    grid = make_grid(topology, lx, ly, nx, ny, origin=(x0, y0))
    sx, sy = grid.shape
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    k = n + 1
    sizes = {
        "scalar": [("scalar", sx * sy)],
        "map": [("phi", sx * sy * k)],
        "spinor": [("psi", sx * sy * k * 4)],
        "pair": [("phi", sx * sy * k), ("psi", sx * sy * k * 4)],
    }[kind_name]
    expected = sum(s for _, s in sizes)
    if payload.size != expected:
        raise SnapshotFormatError(
            f"{path}: payload has {payload.size} floats, header implies {expected}"
        )
    snap = Snapshot(grid=grid, n=n, kind=kind_name)
    pos = 0
    for name, size in sizes:
        block = payload[pos:pos + size].astype(np.float64)
        pos += size
        if name == "scalar":
            snap.scalar = block.reshape(sx, sy)
        elif name == "phi":
            snap.phi = block.reshape(sx, sy, k)
        else:
            snap.psi = block.view(np.complex128).reshape(sx, sy, k, 2)
    return snap
