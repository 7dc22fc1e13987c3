"""Linearized (Born) modeling, migration, and least-squares RTM.

The Born operator L maps a reflectivity m1 (a model perturbation about the
background m0) to scattered receiver data by solving the background system
for u0 and then the scattered system with source -m1 * u0_tt. migrate() is
the exact discrete transpose of L, so <L m1, d> == <m1, L^T d> holds to
rounding, and lsrtm() runs conjugate gradient on the normal equations (CGNR)
with those two operators.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adjoint import _correlate_with_dtt
from .errors import NumericalError, ValidationError
from .grids import Acquisition, Grid2D, ShotRecord, TimeAxis, VelocityModel, _readonly, _require
from .wavesim import SimConfig, _Engine, ricker


@dataclass(frozen=True)
class Reflectivity:
    """Model perturbation (units of m = 1/c^2) on the background grid."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        _require(v.shape == self.grid.shape, "reflectivity shape must match grid")
        _require(np.isfinite(v).all(), "reflectivity must be finite")
        object.__setattr__(self, "values", _readonly(v))


def _background_frames(m0: VelocityModel, acq: Acquisition, time: TimeAxis, cfg: SimConfig, s: int):
    """Forward solve of the background system; padded frames for the Born source."""
    eng = _Engine(m0, cfg, time.dt, receivers=acq.receivers)
    amp = ricker(time, acq.wavelet)
    iz, ix = eng.source_node(*acq.sources[s])
    scale = 1.0 / (m0.grid.dx * m0.grid.dz)

    def src(n, buf):
        buf[iz, ix] += amp[n] * scale

    frames = np.zeros((time.nt, *eng.shape_pad))

    def keep(n, u_pad):
        frames[n] = u_pad

    eng.sweep(src, time.nt, on_frame=keep, record=False, pad_frames=True)
    return eng, frames


def _born_shot(m0, m1_pad, acq, time, cfg, s):
    eng, u0 = _background_frames(m0, acq, time, cfg, s)

    def born_src(n, buf):
        # scattered source -m1 u0_tt; dtt index n matches the update of u^{n+1}
        buf -= m1_pad * eng.dtt(u0, n + 1, time.dt)

    rec = eng.sweep(born_src, time.nt, record=True)
    return ShotRecord(time, rec, s)


def born_forward(
    m0: VelocityModel,
    m1: Reflectivity,
    acq: Acquisition,
    time: TimeAxis,
    cfg: SimConfig,
    threads: int = 1,
) -> list[ShotRecord]:
    """Apply the Born operator L: scattered records for every source."""
    acq.validate_against(m0.grid)
    if m1.grid != m0.grid:
        raise ValidationError("reflectivity grid must match the background grid")
    eng0 = _Engine(m0, cfg, time.dt)
    m1_pad = np.zeros(eng0.shape_pad)
    m1_pad[eng0.phys] = m1.values

    def run(s):
        return _born_shot(m0, m1_pad, acq, time, cfg, s)

    indices = range(len(acq.sources))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, indices))
    return [run(s) for s in indices]


def migrate(
    m0: VelocityModel,
    acq: Acquisition,
    time: TimeAxis,
    cfg: SimConfig,
    residual: list[ShotRecord],
    threads: int = 1,
) -> Reflectivity:
    """Apply the exact transpose L^T: back-propagate residuals, correlate with -u0_tt."""
    acq.validate_against(m0.grid)
    if len(residual) != len(acq.sources):
        raise ValidationError("need one residual record per source")

    def run(s):
        eng, u0 = _background_frames(m0, acq, time, cfg, s)
        acc = _correlate_with_dtt(eng, u0, residual[s].samples, time.nt, time.dt)
        # pad cells cannot carry reflectivity (m1_pad is zero there), so the
        # transpose restricts instead of folding
        return acc[eng.phys].copy()

    indices = range(len(acq.sources))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, indices))
    else:
        parts = [run(s) for s in indices]
    return Reflectivity(m0.grid, sum(parts))


def _dot(records_a: list[ShotRecord], records_b: list[ShotRecord]) -> float:
    return float(sum(np.vdot(a.samples, b.samples) for a, b in zip(records_a, records_b)))


def lsrtm(
    m0: VelocityModel,
    acq: Acquisition,
    time: TimeAxis,
    cfg: SimConfig,
    observed_scattered: list[ShotRecord],
    iters: int,
    tol: float = 0.0,
    threads: int = 1,
) -> tuple[Reflectivity, list[tuple[int, float]]]:
    """CGNR least-squares migration: minimize ||L x - d||^2 over reflectivity x.

    Returns the estimate and the per-iteration data-residual log
    [(iter, ||Lx - d||)], which is non-increasing by the CGNR minimization
    property. The background wavefield is recomputed per application of L and
    L^T; desk-scale grids make that cheap.
    """
    _require(iters >= 1, "iters must be >= 1")
    x = np.zeros(m0.grid.shape)
    r = [ShotRecord(time, d.samples, d.source_index) for d in observed_scattered]
    norm_d = np.sqrt(_dot(r, r))
    log = [(0, norm_d)]
    if norm_d == 0.0:
        return Reflectivity(m0.grid, x), log

    s_field = migrate(m0, acq, time, cfg, r, threads=threads).values
    p = s_field.copy()
    gamma = float(np.vdot(s_field, s_field))
    for it in range(1, iters + 1):
        q = born_forward(m0, Reflectivity(m0.grid, p), acq, time, cfg, threads=threads)
        qq = _dot(q, q)
        if qq == 0.0:
            break
        alpha = gamma / qq
        x = x + alpha * p
        r = [rec.replace_samples(rec.samples - alpha * qrec.samples) for rec, qrec in zip(r, q)]
        res_norm = np.sqrt(_dot(r, r))
        if not np.isfinite(res_norm):
            raise NumericalError("LSRTM residual became non-finite", state={"iter": it})
        log.append((it, res_norm))
        s_field = migrate(m0, acq, time, cfg, r, threads=threads).values
        gamma_new = float(np.vdot(s_field, s_field))
        p = s_field + (gamma_new / gamma) * p
        gamma = gamma_new
        if tol > 0 and res_norm <= tol * norm_d:
            break
    return Reflectivity(m0.grid, x), log
