"""Acoustic finite-difference modeling: m(x) u_tt - lap(u) = s(x, t).

Second-order leapfrog in time with 2nd/4th-order central differences in
space, on a grid padded by an absorbing sponge layer. The physical model
grid stays untouched; padding, damping and the transpose machinery live here
so the adjoint and Born modules can reuse one stencil implementation.

Discrete convention (everything downstream depends on it):

    u^0 = 0,  u^{n+1} = D (2 u^n - u^{n-1} + (dt^2/m) (lap u^n + s^n))

with D the diagonal sponge taper. Point sources add amplitude/(dx*dz) at the
nearest node; receivers sample by bilinear interpolation. The backward sweep
in this module is the exact matrix transpose of the map from grid sources to
receiver samples, which is what makes dot-product and gradient tests tight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, filtfilt

from .errors import StabilityError, ValidationError
from .grids import (
    Acquisition,
    Grid2D,
    ShotRecord,
    SourceWavelet,
    TimeAxis,
    VelocityModel,
    WaveletKind,
    _require,
)

# von Neumann amplification bounds of the second-derivative stencils
_STENCIL_K = {2: 4.0, 4: 16.0 / 3.0}


@dataclass(frozen=True)
class SimConfig:
    """Solver knobs: stencil order, sponge geometry, CFL safety.

    sponge_strength is the one-way amplitude attenuation exponent of the
    absorbing layer at normal incidence: the default 4.6 damps a crossing
    wave to about 1% per pass (1e-4 two-way).
    """

    spatial_order: int = 4
    boundary: str = "sponge"
    sponge_width: int = 30
    sponge_strength: float = 4.6
    cfl_safety: float = 0.9
    # crude pressure-free top (zeroed top rows instead of ghost antisymmetry);
    # off by default so misfit experiments stay free of surface multiples
    free_surface: bool = False
    max_movie_mb: float = 2048.0

    def __post_init__(self):
        _require(self.spatial_order in (2, 4), "spatial_order must be 2 or 4")
        _require(self.boundary == "sponge", "only the sponge boundary is implemented")
        _require(self.sponge_width >= 0, "sponge_width must be >= 0")
        _require(self.sponge_strength >= 0, "sponge_strength must be >= 0")
        _require(0.0 < self.cfl_safety < 1.0, "cfl_safety must be in (0, 1)")


@dataclass(frozen=True)
class WavefieldMovie:
    """Snapshots of u(x, t) on the physical grid, every store_stride-th step."""

    grid: Grid2D
    time: TimeAxis
    store_stride: int
    frames: np.ndarray

    def __post_init__(self):
        expected = (self.time.nt - 1) // self.store_stride + 1
        _require(self.frames.shape == (expected, self.grid.nz, self.grid.nx),
                 f"movie has {self.frames.shape[0]} frames, expected {expected}")
        _require(np.isfinite(self.frames).all(), "movie frames must be finite")


def ricker(time: TimeAxis, w: SourceWavelet) -> np.ndarray:
    """Ricker wavelet (second derivative of a Gaussian) sampled on the time axis.

    Amplitude (1 - 2 pi^2 f^2 tau^2) exp(-pi^2 f^2 tau^2) with tau = t - delay.
    A positive highpass_cut applies a zero-phase 4th-order Butterworth
    high-pass (run forward and backward) to remove the lowest components.
    """
    if w.kind is not WaveletKind.RICKER:
        raise ValidationError(f"unsupported wavelet kind {w.kind}")
    tau = time.times() - w.delay
    arg = (np.pi * w.peak_frequency * tau) ** 2
    amp = w.amplitude * (1.0 - 2.0 * arg) * np.exp(-arg)
    if w.highpass_cut > 0:
        nyquist = 0.5 / time.dt
        b, a = butter(4, w.highpass_cut / nyquist, btype="highpass")
        amp = filtfilt(b, a, amp)
    return amp


def max_stable_dt(model: VelocityModel, cfg: SimConfig) -> float:
    """Largest stable time step, scaled by cfg.cfl_safety.

    Von Neumann analysis of the leapfrog update requires
    dt^2 c^2 (K/dx^2 + K/dz^2) <= 4 where K bounds the symbol of the spatial
    stencil (4 for the 2nd-order stencil, 16/3 for the 4th-order one), so

        dt <= (2 / sqrt(K)) / (c_max sqrt(1/dx^2 + 1/dz^2)).

    For dx = dz this reduces to C * dx / c_max with C = 1/sqrt(2) (order 2)
    and C = sqrt(3/8) (order 4).
    """
    K = _STENCIL_K[cfg.spatial_order]
    g = model.grid
    bound = (2.0 / np.sqrt(K)) / (model.c_max * np.sqrt(1.0 / g.dx**2 + 1.0 / g.dz**2))
    return cfg.cfl_safety * bound


class _Engine:
    """Padded-grid stepping workspace for one (model, config, receivers) triple."""

    def __init__(self, model: VelocityModel, cfg: SimConfig, dt: float,
                 receivers=(), check_cfl: bool = True):
        if check_cfl and dt > max_stable_dt(model, cfg) * (1.0 + 1e-12):
            raise StabilityError(
                f"dt={dt:.6g} s exceeds the stable limit {max_stable_dt(model, cfg):.6g} s"
            )
        grid = model.grid
        w = cfg.sponge_width
        self.grid = grid
        self.cfg = cfg
        self.dt = dt
        self.pad_top = 0 if cfg.free_surface else w
        self.pad = w
        nz_p = grid.nz + self.pad_top + w
        nx_p = grid.nx + 2 * w
        self.shape_pad = (nz_p, nx_p)
        self.phys = (slice(self.pad_top, self.pad_top + grid.nz), slice(w, w + grid.nx))

        m_pad = np.empty(self.shape_pad)
        m_pad[self.phys] = model.m
        # edge replication keeps the sponge medium consistent with the rim
        m_pad[: self.pad_top, :] = m_pad[self.pad_top, :][None, :]
        m_pad[self.pad_top + grid.nz :, :] = m_pad[self.pad_top + grid.nz - 1, :][None, :]
        m_pad[:, :w] = m_pad[:, w][:, None]
        m_pad[:, w + grid.nx :] = m_pad[:, w + grid.nx - 1][:, None]
        self.m_pad = m_pad
        self.A = dt**2 / m_pad

        # sponge damping term m sigma u_t: quadratic ramp sigma = s_max (d/W)^2
        # with s_max chosen so the one-way path integral of sigma/c equals
        # sponge_strength (int (d/W)^2 over the layer contributes W dx / 3).
        # The reference speed is the model's fixed vmax bound, NOT the field
        # maximum: sigma must not depend on m or the adjoint gradient would
        # miss that derivative path.
        a = 0.5 * dt * self._sigma_profile(model.vmax)
        self.w_plus = 1.0 + a
        self.w_minus = 1.0 - a
        self.d_new = 1.0 / self.w_plus
        # the stencil cannot reach the outermost ring, so pin it to zero
        # (Dirichlet); leaving it live would make the update non-symmetric
        # and break the exact-transpose property of the backward sweep
        ring = cfg.spatial_order // 2
        self.d_new[:ring, :] = 0.0
        self.d_new[-ring:, :] = 0.0
        self.d_new[:, :ring] = 0.0
        self.d_new[:, -ring:] = 0.0

        self.inv_dx2 = 1.0 / grid.dx**2
        self.inv_dz2 = 1.0 / grid.dz**2
        self._rec_flat, self._rec_w = self._receiver_weights(receivers)
        self.n_rec = len(receivers)

    def _sigma_profile(self, c_ref: float) -> np.ndarray:
        nz_p, nx_p = self.shape_pad
        w, s = self.cfg.sponge_width, self.cfg.sponge_strength
        if w == 0 or s == 0:
            return np.zeros(self.shape_pad)
        iz = np.arange(nz_p)[:, None]
        ix = np.arange(nx_p)[None, :]
        zero = np.zeros((nz_p, nx_p), dtype=np.intp)
        depth_left = np.maximum(w - ix, 0) + zero
        depth_right = np.maximum(ix - (nx_p - 1 - w), 0) + zero
        depth_bot = np.maximum(iz - (nz_p - 1 - w), 0) + zero
        depth_top = (np.maximum(self.pad_top - iz, 0) + zero) if self.pad_top else zero
        depth = np.maximum.reduce([depth_left, depth_right, depth_bot, depth_top])
        s_max = 3.0 * s * c_ref / (w * min(self.grid.dx, self.grid.dz))
        return s_max * (depth / w) ** 2

    def _receiver_weights(self, receivers):
        """Bilinear sampling weights on the padded grid (weights sum to 1)."""
        flat_idx = np.zeros((len(receivers), 4), dtype=np.intp)
        weights = np.zeros((len(receivers), 4))
        g = self.grid
        x0, z0 = g.origin
        nx_p = self.shape_pad[1]
        for r, (x, z) in enumerate(receivers):
            fx = (x - x0) / g.dx
            fz = (z - z0) / g.dz
            ix = min(int(np.floor(fx)), g.nx - 2)
            iz = min(int(np.floor(fz)), g.nz - 2)
            ax, az = fx - ix, fz - iz
            ixp, izp = ix + self.pad, iz + self.pad_top
            flat_idx[r] = [
                izp * nx_p + ixp,
                izp * nx_p + ixp + 1,
                (izp + 1) * nx_p + ixp,
                (izp + 1) * nx_p + ixp + 1,
            ]
            weights[r] = [(1 - ax) * (1 - az), ax * (1 - az), (1 - ax) * az, ax * az]
        return flat_idx, weights

    def source_node(self, x: float, z: float) -> tuple[int, int]:
        g = self.grid
        ix = int(round((x - g.origin[0]) / g.dx))
        iz = int(round((z - g.origin[1]) / g.dz))
        if not (0 <= ix < g.nx and 0 <= iz < g.nz):
            raise ValidationError(f"source at ({x}, {z}) is outside the grid")
        return iz + self.pad_top, ix + self.pad

    def laplacian(self, u: np.ndarray, out: np.ndarray) -> np.ndarray:
        out[...] = 0.0
        if self.cfg.spatial_order == 2:
            c = out[1:-1, 1:-1]
            c += (u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) * self.inv_dx2
            c += (u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]) * self.inv_dz2
        else:
            c = out[2:-2, 2:-2]
            uc = u[2:-2, 2:-2]
            c += (
                -u[2:-2, 4:] / 12 + 4 * u[2:-2, 3:-1] / 3 - 5 * uc / 2
                + 4 * u[2:-2, 1:-3] / 3 - u[2:-2, :-4] / 12
            ) * self.inv_dx2
            c += (
                -u[4:, 2:-2] / 12 + 4 * u[3:-1, 2:-2] / 3 - 5 * uc / 2
                + 4 * u[1:-3, 2:-2] / 3 - u[:-4, 2:-2] / 12
            ) * self.inv_dz2
        return out

    def dtt(self, frames: np.ndarray, k: int, dt: float) -> np.ndarray:
        """Exact second time difference of the update at index k-1.

        The damped recursion satisfies (1+a) u^{k} - 2 u^{k-1} + (1-a) u^{k-2}
        = A (lap u^{k-1} + s^{k-1}) exactly, so this weighted difference over
        dt^2 recovers the discrete u_tt at every node, sponge included (ghost
        zero before frame 0).
        """
        if k >= 2:
            diff = self.w_plus * frames[k] - 2.0 * frames[k - 1] + self.w_minus * frames[k - 2]
        else:
            diff = self.w_plus * frames[1] - 2.0 * frames[0]
        return diff / dt**2

    def sample_receivers(self, u: np.ndarray) -> np.ndarray:
        if self.n_rec == 0:
            return np.zeros(0)
        return (u.ravel()[self._rec_flat] * self._rec_w).sum(axis=1)

    def spread_receivers(self, q: np.ndarray, values: np.ndarray) -> None:
        """Transpose of sample_receivers: scatter-add values into the grid buffer."""
        if self.n_rec:
            np.add.at(q.ravel(), self._rec_flat, self._rec_w * values[:, None])

    def sweep(self, source_fn, nt: int, on_frame=None, record: bool = False,
              pad_frames: bool = False) -> np.ndarray | None:
        """Run nt leapfrog frames (frame 0 is zero): the one loop used everywhere.

        source_fn(n, buffer) adds the grid source s^n into the zeroed padded
        buffer; on_frame(n, u) sees each damped frame, restricted to the
        physical region unless pad_frames=True. Returns the receiver record
        (n_rec, nt) when record=True.

        The exact-transpose backward sweep is this same loop run on the
        time-reversed adjoint sources; callers handle the index reversal.
        """
        u_prev = np.zeros(self.shape_pad)
        u_cur = np.zeros(self.shape_pad)
        lap = np.empty(self.shape_pad)
        q = np.zeros(self.shape_pad)
        rec = np.zeros((self.n_rec, nt)) if record else None
        free_top = self.cfg.free_surface

        def emit(n, u):
            if on_frame is not None:
                on_frame(n, u if pad_frames else u[self.phys])

        emit(0, u_cur)
        for n in range(nt - 1):
            q[...] = 0.0
            if source_fn is not None:
                source_fn(n, q)
            self.laplacian(u_cur, lap)
            lap += q
            u_next = self.d_new * (2.0 * u_cur - self.w_minus * u_prev + self.A * lap)
            if free_top:
                u_next[0, :] = 0.0
            u_prev, u_cur = u_cur, u_next
            # cheap probe; non-finite values spread through the stencil within
            # a few steps, so subsampling cannot miss a blow-up for long. The
            # 1e120 breaker reports exponential divergence well before float64
            # overflow would produce the literal inf.
            probe = u_cur[:: max(1, self.shape_pad[0] // 8), :: max(1, self.shape_pad[1] // 8)]
            if not np.isfinite(probe).all() or np.abs(probe).max() > 1e120:
                raise StabilityError(f"wavefield became non-finite (or diverged) at step {n + 1}")
            if record:
                rec[:, n + 1] = self.sample_receivers(u_cur)
            emit(n + 1, u_cur)
        return rec


def _auto_stride(grid: Grid2D, nt: int, cfg: SimConfig) -> int:
    frame_bytes = grid.nz * grid.nx * 8
    cap = cfg.max_movie_mb * 2**20
    full = nt * frame_bytes
    return 1 if full <= cap else int(np.ceil(full / cap))


def forward(
    model: VelocityModel,
    acq: Acquisition,
    time: TimeAxis,
    cfg: SimConfig,
    source_index: int = 0,
    store_stride: int | None = None,
) -> tuple[ShotRecord, WavefieldMovie]:
    """Simulate one shot; returns the receiver record and a wavefield movie."""
    acq.validate_against(model.grid)
    if not 0 <= source_index < len(acq.sources):
        raise ValidationError(f"source_index {source_index} out of range")
    stride = store_stride if store_stride is not None else _auto_stride(model.grid, time.nt, cfg)
    _require(stride >= 1, "store_stride must be >= 1")

    eng = _Engine(model, cfg, time.dt, receivers=acq.receivers)
    amp = ricker(time, acq.wavelet)
    iz, ix = eng.source_node(*acq.sources[source_index])
    scale = 1.0 / (model.grid.dx * model.grid.dz)

    def src(n, buf):
        buf[iz, ix] += amp[n] * scale

    n_frames = (time.nt - 1) // stride + 1
    frames = np.zeros((n_frames, model.grid.nz, model.grid.nx))

    def keep(n, u_phys):
        if n % stride == 0:
            frames[n // stride] = u_phys

    rec = eng.sweep(src, time.nt, on_frame=keep, record=True)
    return (
        ShotRecord(time, rec, source_index),
        WavefieldMovie(model.grid, time, stride, frames),
    )
