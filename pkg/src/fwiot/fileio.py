"""Bit-exact binary I/O for grid fields and shot gathers.

Two little-endian formats with 8-byte magic headers:

FWIGRID1  grid field
    magic "FWIGRID1", u64 nx, u64 nz, f64 dx, f64 dz, f64 x0, f64 z0,
    then nz*nx f64 values row-major (row index = z, column index = x).

FWIGATH1  shot gather
    magic "FWIGATH1", u64 n_receivers, u64 nt, f64 dt, u64 source_index,
    then n_receivers*nt f64 values row-major (receiver-major).

Values are written verbatim (no compression), so write/read round-trips are
bitwise identity. Gradient and image fields reuse FWIGRID1 with the m-field
slot holding arbitrary finite values; use write_field/read_field for those.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .grids import Grid2D, ShotRecord, TimeAxis, VelocityModel

GRID_MAGIC = b"FWIGRID1"
GATHER_MAGIC = b"FWIGATH1"

_GRID_HEADER = struct.Struct("<QQdddd")
_GATHER_HEADER = struct.Struct("<QQdQ")


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FileFormatError(f"truncated file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def write_field(grid: Grid2D, values: np.ndarray, path) -> None:
    """Write an arbitrary finite (nz, nx) field as FWIGRID1."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.shape != grid.shape:
        raise FileFormatError(f"field shape {values.shape} does not match grid {grid.shape}")
    if not np.isfinite(values).all():
        raise FileFormatError("refusing to write non-finite field values")
    with open(Path(path), "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(_GRID_HEADER.pack(grid.nx, grid.nz, grid.dx, grid.dz, *grid.origin))
        fh.write(values.astype("<f8", copy=False).tobytes())


def read_field(path) -> tuple[Grid2D, np.ndarray]:
    """Read an FWIGRID1 file; returns (grid, values) without sign/positivity checks."""
    with open(Path(path), "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != GRID_MAGIC:
            raise FileFormatError(f"bad magic {magic!r}, expected {GRID_MAGIC!r}")
        nx, nz, dx, dz, x0, z0 = _GRID_HEADER.unpack(_read_exact(fh, _GRID_HEADER.size, "header"))
        if nx < 2 or nz < 2 or not (dx > 0 and dz > 0):
            raise FileFormatError(f"invalid grid header: nx={nx} nz={nz} dx={dx} dz={dz}")
        payload = _read_exact(fh, 8 * nx * nz, "field payload")
        extra = fh.read(1)
        if extra:
            raise FileFormatError("trailing bytes after field payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(nz, nx).astype(np.float64)
    if not np.isfinite(values).all():
        raise FileFormatError("field payload contains non-finite values")
    return Grid2D(int(nx), int(nz), dx, dz, (x0, z0)), values


def write_grid_file(model: VelocityModel, path) -> None:
    """Write a velocity model's squared-slowness field as FWIGRID1."""
    write_field(model.grid, model.m, path)


def read_grid_file(path, vmin: float | None = None, vmax: float | None = None) -> VelocityModel:
    """Read an FWIGRID1 file as a VelocityModel (validates positivity and bounds)."""
    grid, values = read_field(path)
    kw = {}
    if vmin is not None:
        kw["vmin"] = vmin
    if vmax is not None:
        kw["vmax"] = vmax
    return VelocityModel(grid, values, **kw)


def write_shot_file(shot: ShotRecord, path) -> None:
    """Write a shot record as FWIGATH1."""
    with open(Path(path), "wb") as fh:
        fh.write(GATHER_MAGIC)
        fh.write(_GATHER_HEADER.pack(shot.n_receivers, shot.time.nt, shot.time.dt, shot.source_index))
        fh.write(np.ascontiguousarray(shot.samples).astype("<f8", copy=False).tobytes())


def read_shot_file(path) -> ShotRecord:
    """Read an FWIGATH1 file."""
    with open(Path(path), "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != GATHER_MAGIC:
            raise FileFormatError(f"bad magic {magic!r}, expected {GATHER_MAGIC!r}")
        n_rec, nt, dt, src = _GATHER_HEADER.unpack(_read_exact(fh, _GATHER_HEADER.size, "header"))
        if n_rec < 1 or nt < 2 or not dt > 0:
            raise FileFormatError(f"invalid gather header: receivers={n_rec} nt={nt} dt={dt}")
        payload = _read_exact(fh, 8 * n_rec * nt, "gather payload")
        extra = fh.read(1)
        if extra:
            raise FileFormatError("trailing bytes after gather payload")
    samples = np.frombuffer(payload, dtype="<f8").reshape(n_rec, nt).astype(np.float64)
    if not np.isfinite(samples).all():
        raise FileFormatError("gather payload contains non-finite values")
    return ShotRecord(TimeAxis(int(nt), dt), samples, int(src))
