"""Core data model: grids, velocity models, acquisition geometry, shot records.

All containers are frozen dataclasses validated on construction; instances are
immutable and safe to share between threads. Array fields are stored as
float64 and set read-only so accidental in-place edits fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ValidationError

# Construction-time velocity bounds (m/s). Guards the CFL computation; callers
# with exotic material can widen them per instance.
DEFAULT_VMIN = 300.0
DEFAULT_VMAX = 8000.0


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, order="C")
    out.flags.writeable = False
    return out


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


@dataclass(frozen=True)
class Grid2D:
    """Rectangular grid: nx horizontal nodes, nz vertical nodes, spacings in meters."""

    nx: int
    nz: int
    dx: float
    dz: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        _require(int(self.nx) >= 2 and int(self.nz) >= 2, "grid needs nx >= 2 and nz >= 2")
        _require(self.dx > 0 and self.dz > 0, "grid spacings must be positive")
        _require(np.isfinite([self.dx, self.dz, *self.origin]).all(), "grid geometry must be finite")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "nz", int(self.nz))

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (nz, nx); z is the slow, row index."""
        return (self.nz, self.nx)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, z0 = self.origin
        return (x0, x0 + (self.nx - 1) * self.dx, z0, z0 + (self.nz - 1) * self.dz)

    def x_coords(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.nx)

    def z_coords(self) -> np.ndarray:
        return self.origin[1] + self.dz * np.arange(self.nz)

    def contains(self, x: float, z: float) -> bool:
        x0, x1, z0, z1 = self.extent
        return (x0 <= x <= x1) and (z0 <= z <= z1)


@dataclass(frozen=True)
class VelocityModel:
    """Squared-slowness field m = 1/c^2 on a Grid2D, shape (nz, nx)."""

    grid: Grid2D
    m: np.ndarray
    vmin: float = DEFAULT_VMIN
    vmax: float = DEFAULT_VMAX

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        _require(m.shape == self.grid.shape, f"m has shape {m.shape}, expected {self.grid.shape}")
        _require(np.isfinite(m).all(), "m must be finite")
        _require((m > 0).all(), "m must be strictly positive")
        _require(0 < self.vmin < self.vmax, "need 0 < vmin < vmax")
        c = 1.0 / np.sqrt(m)
        _require(
            c.min() >= self.vmin - 1e-9 and c.max() <= self.vmax + 1e-9,
            f"velocity range [{c.min():.1f}, {c.max():.1f}] m/s outside "
            f"bounds [{self.vmin:.1f}, {self.vmax:.1f}]",
        )
        object.__setattr__(self, "m", _readonly(m))

    @classmethod
    def from_velocity(cls, grid: Grid2D, c, **kw) -> "VelocityModel":
        c = np.broadcast_to(np.asarray(c, dtype=np.float64), grid.shape)
        return cls(grid, 1.0 / c**2, **kw)

    def velocity(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.m)

    @property
    def c_max(self) -> float:
        return float(1.0 / np.sqrt(self.m.min()))


@dataclass(frozen=True)
class TimeAxis:
    """Uniform recording axis: nt samples at step dt seconds, t_i = i*dt."""

    nt: int
    dt: float

    def __post_init__(self):
        _require(int(self.nt) >= 2, "time axis needs nt >= 2")
        _require(self.dt > 0 and np.isfinite(self.dt), "dt must be positive and finite")
        object.__setattr__(self, "nt", int(self.nt))

    @property
    def duration(self) -> float:
        """Recording length T = nt * dt."""
        return self.nt * self.dt

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)


class WaveletKind(str, Enum):
    RICKER = "ricker"


@dataclass(frozen=True)
class SourceWavelet:
    """Ricker source signature; highpass_cut > 0 enables a zero-phase high-pass.

    amplitude is a plain scale factor (zero gives a silent source, which the
    forward solver maps to identically zero records by linearity).
    """

    peak_frequency: float
    delay: float = 0.0
    highpass_cut: float = 0.0
    amplitude: float = 1.0
    kind: WaveletKind = WaveletKind.RICKER

    def __post_init__(self):
        _require(self.peak_frequency > 0, "peak_frequency must be positive")
        _require(self.delay >= 0, "delay must be non-negative")
        _require(self.highpass_cut >= 0, "highpass_cut must be non-negative (0 disables)")
        _require(np.isfinite(self.amplitude), "amplitude must be finite")


@dataclass(frozen=True)
class Acquisition:
    """Source/receiver layout, positions in meters inside the model grid."""

    sources: tuple[tuple[float, float], ...]
    receivers: tuple[tuple[float, float], ...]
    wavelet: SourceWavelet

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple((float(x), float(z)) for x, z in self.sources))
        object.__setattr__(self, "receivers", tuple((float(x), float(z)) for x, z in self.receivers))
        _require(len(self.receivers) > 0, "receiver list must be non-empty")
        _require(len(self.sources) > 0, "source list must be non-empty")
        flat = [v for p in (*self.sources, *self.receivers) for v in p]
        _require(np.isfinite(flat).all(), "positions must be finite")

    def validate_against(self, grid: Grid2D) -> None:
        for role, pts in (("source", self.sources), ("receiver", self.receivers)):
            for x, z in pts:
                if not grid.contains(x, z):
                    raise ValidationError(f"{role} at ({x}, {z}) is outside the grid extent {grid.extent}")


@dataclass(frozen=True)
class ShotRecord:
    """Time histories at the receivers for one source: samples shape (R, nt)."""

    time: TimeAxis
    samples: np.ndarray
    source_index: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        _require(s.ndim == 2, "samples must be a 2-D (receivers, nt) array")
        _require(s.shape[1] == self.time.nt, f"samples have {s.shape[1]} columns, time axis has nt={self.time.nt}")
        _require(np.isfinite(s).all(), "samples must be finite")
        _require(int(self.source_index) >= 0, "source_index must be non-negative")
        object.__setattr__(self, "samples", _readonly(s))
        object.__setattr__(self, "source_index", int(self.source_index))

    @property
    def n_receivers(self) -> int:
        return self.samples.shape[0]

    def replace_samples(self, samples: np.ndarray) -> "ShotRecord":
        return ShotRecord(self.time, samples, self.source_index)


@dataclass(frozen=True)
class MisfitEvaluation:
    """Scalar misfit value plus the adjoint source dJ/df, shaped like the data."""

    value: float
    adjoint_source: np.ndarray

    def __post_init__(self):
        _require(np.isfinite(self.value), "misfit value must be finite")
        a = np.asarray(self.adjoint_source, dtype=np.float64)
        _require(np.isfinite(a).all(), "adjoint source must be finite")
        object.__setattr__(self, "adjoint_source", _readonly(a))
