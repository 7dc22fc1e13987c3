"""Uniform misfit interface: L2, integral-L2, trace-W2, and global-W2.

Every kind maps (simulated, observed) shot records to a scalar value and the
adjoint source dJ/df that drives the backward wave solve. The two transport
kinds route through the normalization chain so their adjoint sources are
valid derivatives with respect to the raw samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MaConvergenceError, ValidationError
from .grids import MisfitEvaluation, ShotRecord
from .mongeampere import MaParams, dataset_to_density, ma_solve, w2_gradient_2d, w2_squared_2d
from .normalize import Normalization
from .ot1d import trace_w2_misfit

KINDS = ("l2", "integral_l2", "w2_trace", "w2_global")


@dataclass(frozen=True)
class MisfitKind:
    """Misfit selection plus the parameters the selected kind needs."""

    kind: str = "l2"
    normalization: Normalization = field(default_factory=Normalization)
    ma_params: MaParams = field(default_factory=MaParams)
    smooth_sigma: float = 1.0
    ma_grid_n: int = 64
    fallback_to_trace: bool = False
    per_trace_normalization: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown misfit kind {self.kind!r}, expected one of {KINDS}")


def _check_shapes(sim: ShotRecord, obs: ShotRecord) -> None:
    if sim.samples.shape != obs.samples.shape or sim.time != obs.time:
        raise ValidationError("sim and obs records must share shape and time axis")


def _l2(sim: ShotRecord, obs: ShotRecord) -> MisfitEvaluation:
    dt = sim.time.dt
    r = sim.samples - obs.samples
    return MisfitEvaluation(0.5 * float(np.sum(r**2)) * dt, r * dt)


def _integral_l2(sim: ShotRecord, obs: ShotRecord) -> MisfitEvaluation:
    dt = sim.time.dt
    rc = np.cumsum(sim.samples - obs.samples, axis=1) * dt
    value = 0.5 * float(np.sum(rc**2)) * dt
    adjoint = np.cumsum(rc[:, ::-1], axis=1)[:, ::-1] * dt**2
    return MisfitEvaluation(value, adjoint)


def _w2_global(kind: MisfitKind, sim: ShotRecord, obs: ShotRecord) -> MisfitEvaluation:
    chain_f = dataset_to_density(sim.samples, obs.samples, kind.normalization,
                                 kind.smooth_sigma, kind.ma_grid_n)
    chain_g = dataset_to_density(obs.samples, sim.samples, kind.normalization,
                                 kind.smooth_sigma, kind.ma_grid_n)
    sol = ma_solve(chain_f.density, chain_g.density, kind.ma_params)
    value = w2_squared_2d(chain_f.density, chain_g.density, sol)
    a_density = w2_gradient_2d(chain_f.density, chain_g.density, sol, kind.ma_params)
    return MisfitEvaluation(value, chain_f.pullback(a_density))


def evaluate(kind: MisfitKind, sim: ShotRecord, obs: ShotRecord) -> MisfitEvaluation:
    """Evaluate the selected misfit for one shot.

    w2_global reports Monge-Ampere non-convergence distinctly; with
    fallback_to_trace=True that shot silently degrades to the trace-W2 value.
    """
    _check_shapes(sim, obs)
    if kind.kind == "l2":
        return _l2(sim, obs)
    if kind.kind == "integral_l2":
        return _integral_l2(sim, obs)
    if kind.kind == "w2_trace":
        return trace_w2_misfit(sim, obs, kind.normalization, kind.per_trace_normalization)
    try:
        return _w2_global(kind, sim, obs)
    except MaConvergenceError:
        if not kind.fallback_to_trace:
            raise
        return trace_w2_misfit(sim, obs, kind.normalization, kind.per_trace_normalization)
