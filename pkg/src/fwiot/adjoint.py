"""Adjoint wave solves, adjoint-state gradients, and RTM imaging.

Discretize-then-optimize: the backward sweep is the exact matrix transpose of
the forward time loop (same stencil, time reversed, receiver sampling
transposed to scatter-add injection), so the assembled gradient matches
finite differences of the discrete misfit to solver precision at interior
nodes. The model gradient of one shot is

    dJ/dm_i = - sum_n chi_i^{n+1} (u^{n+1} - 2 u^n + u^{n-1})_i / dt^2

with u the stored forward frames and chi the backward frames driven by the
misfit's adjoint source. Sponge padding replicates edge model cells; the
pad-region contributions are folded back onto the rim so edge derivatives
stay exact too.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grids import Acquisition, Grid2D, ShotRecord, TimeAxis, VelocityModel, _readonly, _require
from .misfit import MisfitKind, evaluate
from .wavesim import SimConfig, WavefieldMovie, _Engine, ricker


@dataclass(frozen=True)
class GradientField:
    """dJ/dm on the model grid."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        _require(v.shape == self.grid.shape, "gradient shape must match grid")
        _require(np.isfinite(v).all(), "gradient must be finite")
        object.__setattr__(self, "values", _readonly(v))


@dataclass(frozen=True)
class RtmImage:
    """Zero-lag cross-correlation image on the model grid."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        _require(v.shape == self.grid.shape, "image shape must match grid")
        _require(np.isfinite(v).all(), "image must be finite")
        object.__setattr__(self, "values", _readonly(v))


def _backward_sweep(eng: _Engine, lam: np.ndarray, nt: int, consume) -> None:
    """Exact transpose of the forward sweep driven by data-space sources lam (R, nt).

    Runs the forward stepper on the time-reversed sources for nt+1 frames;
    the frame emitted at sweep step tau is the backward field chi^{nt-tau}.
    consume(k, chi_pad) sees k = nt-1 .. 0 on the padded grid.
    """

    def src(tau, buf):
        eng.spread_receivers(buf, lam[:, nt - 1 - tau])

    def on_frame(tau, chi_pad):
        k = nt - tau
        if k <= nt - 1:
            consume(k, chi_pad)

    eng.sweep(src, nt + 1, on_frame=on_frame, pad_frames=True)


def _fold_pad(eng: _Engine, grad_pad: np.ndarray) -> np.ndarray:
    """Transpose of the edge replication that built the padded model."""
    nz, nx = eng.grid.shape
    pt, w = eng.pad_top, eng.pad
    g = grad_pad
    if w:
        g[:, w] += g[:, :w].sum(axis=1)
        g[:, w + nx - 1] += g[:, w + nx:].sum(axis=1)
    if pt:
        g[pt, :] += g[:pt, :].sum(axis=0)
    g[pt + nz - 1, :] += g[pt + nz:, :].sum(axis=0)
    return g[eng.phys].copy()


def _correlate_with_dtt(eng: _Engine, frames: np.ndarray, lam: np.ndarray, nt: int, dt: float) -> np.ndarray:
    """Accumulate -sum_k chi^k * dtt^{k-1} over the backward sweep (padded)."""
    acc = np.zeros(eng.shape_pad)

    def consume(k, chi_pad):
        if k >= 1:
            acc[...] -= chi_pad * eng.dtt(frames, k, dt)

    _backward_sweep(eng, lam, nt, consume)
    return acc


def adjoint_solve(
    model: VelocityModel,
    acq: Acquisition,
    adjoint_source: ShotRecord,
    cfg: SimConfig,
    store_stride: int = 1,
) -> WavefieldMovie:
    """Solve the adjoint system backward from t = T with receiver-located sources.

    Sources are injected through the transpose of the bilinear receiver
    sampling with the same 1/(dx*dz) point-source normalization as forward
    modeling. Equivalent to a forward solve on time-reversed traces with the
    frames re-reversed (shifted by one step at the ends).
    """
    acq.validate_against(model.grid)
    if adjoint_source.n_receivers != len(acq.receivers):
        raise ValidationError("adjoint source trace count must match the receiver list")
    nt = adjoint_source.time.nt
    eng = _Engine(model, cfg, adjoint_source.time.dt, receivers=acq.receivers)
    lam = adjoint_source.samples / (model.grid.dx * model.grid.dz)

    n_frames = (nt - 1) // store_stride + 1
    frames = np.zeros((n_frames, model.grid.nz, model.grid.nx))

    def consume(k, chi_pad):
        if k % store_stride == 0:
            frames[k // store_stride] = chi_pad[eng.phys]

    _backward_sweep(eng, lam, nt, consume)
    return WavefieldMovie(model.grid, adjoint_source.time, store_stride, frames)


def _single_shot_gradient(model, acq, time, cfg, obs, misfit, source_index):
    eng = _Engine(model, cfg, time.dt, receivers=acq.receivers)
    amp = ricker(time, acq.wavelet)
    iz, ix = eng.source_node(*acq.sources[source_index])
    scale = 1.0 / (model.grid.dx * model.grid.dz)

    def src(n, buf):
        buf[iz, ix] += amp[n] * scale

    frames = np.zeros((time.nt, *eng.shape_pad))

    def keep(n, u_pad):
        frames[n] = u_pad

    rec = eng.sweep(src, time.nt, on_frame=keep, record=True, pad_frames=True)
    sim = ShotRecord(time, rec, source_index)
    ev = evaluate(misfit, sim, obs)
    grad_pad = _correlate_with_dtt(eng, frames, ev.adjoint_source, time.nt, time.dt)
    return ev.value, _fold_pad(eng, grad_pad)


def gradient(
    model: VelocityModel,
    acq: Acquisition,
    time: TimeAxis,
    cfg: SimConfig,
    observed: list[ShotRecord],
    misfit: MisfitKind,
    source_mask_radius: int = 3,
    threads: int = 1,
) -> tuple[float, GradientField]:
    """Total misfit and its model gradient over all shots.

    Shots run independently (optionally on a thread pool); accumulation
    happens afterwards in fixed source order, so the result is deterministic
    and invariant under permutations of the shot schedule. The gradient
    within source_mask_radius nodes of every source is zeroed to suppress the
    singular source imprint.
    """
    acq.validate_against(model.grid)
    if len(observed) != len(acq.sources):
        raise ValidationError("need one observed record per source")

    def run(s):
        return _single_shot_gradient(model, acq, time, cfg, observed[s], misfit, s)

    indices = range(len(acq.sources))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, indices))
    else:
        results = [run(s) for s in indices]

    total = 0.0
    grad = np.zeros(model.grid.shape)
    for value, g in results:
        total += value
        grad += g

    if source_mask_radius > 0:
        for x, z in acq.sources:
            ix = int(round((x - model.grid.origin[0]) / model.grid.dx))
            iz = int(round((z - model.grid.origin[1]) / model.grid.dz))
            z0, z1 = max(iz - source_mask_radius, 0), iz + source_mask_radius + 1
            x0, x1 = max(ix - source_mask_radius, 0), ix + source_mask_radius + 1
            grad[z0:z1, x0:x1] = 0.0
    return total, GradientField(model.grid, grad)


def rtm_image(
    model_background: VelocityModel,
    acq: Acquisition,
    time: TimeAxis,
    cfg: SimConfig,
    observed: list[ShotRecord],
    threads: int = 1,
) -> RtmImage:
    """Zero time-lag cross-correlation of source and back-propagated data fields.

    Three steps per shot: forward modeling in the background model,
    backpropagation of the measured data, correlation sum_n u^n v^n dt. The
    raw data drives the adjoint solve directly (no misfit derivative).
    """
    acq.validate_against(model_background.grid)
    if len(observed) != len(acq.sources):
        raise ValidationError("need one observed record per source")
    grid = model_background.grid

    def run(s):
        eng = _Engine(model_background, cfg, time.dt, receivers=acq.receivers)
        amp = ricker(time, acq.wavelet)
        iz, ix = eng.source_node(*acq.sources[s])
        scale = 1.0 / (grid.dx * grid.dz)

        def src(n, buf):
            buf[iz, ix] += amp[n] * scale

        frames = np.zeros((time.nt, grid.nz, grid.nx))

        def keep(n, u_pad):
            frames[n] = u_pad[eng.phys]

        eng.sweep(src, time.nt, on_frame=keep, record=False, pad_frames=True)

        image = np.zeros(grid.shape)

        def consume(k, chi_pad):
            image[...] += frames[k] * chi_pad[eng.phys] * time.dt

        _backward_sweep(eng, observed[s].samples, time.nt, consume)
        return image

    indices = range(len(acq.sources))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            images = list(pool.map(run, indices))
    else:
        images = [run(s) for s in indices]
    return RtmImage(grid, sum(images))
