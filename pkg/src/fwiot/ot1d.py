"""Exact 1D optimal transport between trace densities.

On the line the optimal plan under quadratic cost is the monotone
rearrangement composed from the cumulative distributions, T = Ginv o F, which
gives a closed form for the squared distance

    W2^2(f, g) = sum_i (t_i - T_i)^2 f_i dt

and for its derivative with respect to f. CDF inversion is piecewise linear
(not nearest-sample) so the map, and with it the adjoint source, varies
continuously with the data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .grids import MisfitEvaluation, ShotRecord, TimeAxis, _readonly, _require
from .normalize import Density1D, Normalization, ScalingKind, chain_rule, scale, to_density


@dataclass(frozen=True)
class Cdf1D:
    """Cumulative mass at the sample times; F[-1] is renormalized to exactly 1."""

    t: TimeAxis
    F: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.F, dtype=np.float64)
        _require(F.shape == (self.t.nt,), "CDF length must match time axis")
        _require((np.diff(F) >= 0).all() and F[0] >= 0, "CDF must be non-decreasing from >= 0")
        _require(abs(F[-1] - 1.0) < 1e-12, "CDF must end at 1")
        object.__setattr__(self, "F", _readonly(F))


@dataclass(frozen=True)
class TransportPlan1D:
    """Target times T(t_i) of the monotone map; non-decreasing by construction."""

    map: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.map, dtype=np.float64)
        _require((np.diff(m) >= -1e-12).all(), "1D transport map must be non-decreasing")
        object.__setattr__(self, "map", _readonly(m))


def cdf(p: Density1D) -> Cdf1D:
    """Left-endpoint cumulative sum F_i = sum_{j<=i} p_j dt, renormalized to end at 1."""
    F = np.cumsum(p.p) * p.t.dt
    return Cdf1D(p.t, F / F[-1])


def _invert(c: Cdf1D, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear inverse of a CDF at levels y in [0, 1].

    Mass p_i occupies the cell (t_i - dt, t_i]; a virtual anchor (t_0 - dt, 0)
    closes the first cell. Returns the times and the cell indices whose
    density value is the local slope (needed by the adjoint source). Ties in
    flat regions resolve to the left edge.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < -1e-12) or np.any(y > 1.0 + 1e-12):
        raise ValidationError("quantile level outside [0, 1]")
    y = np.clip(y, 0.0, 1.0)

    t = c.t.times()
    xp = np.concatenate(([0.0], c.F))
    tp = np.concatenate(([t[0] - c.t.dt], t))
    idx = np.searchsorted(xp, y, side="left")
    idx = np.clip(idx, 1, xp.size - 1)
    lo, hi = xp[idx - 1], xp[idx]
    denom = hi - lo
    frac = np.where(denom > 0, (y - lo) / np.where(denom > 0, denom, 1.0), 0.0)
    times = tp[idx - 1] + frac * (tp[idx] - tp[idx - 1])
    cells = np.clip(idx - 1, 0, c.t.nt - 1)
    # exact zero level sits on the anchor
    times = np.where(y <= 0.0, tp[0], times)
    return times, cells


def quantile(c: Cdf1D, y) -> np.ndarray | float:
    """Inverse CDF; scalar in, scalar out."""
    times, _ = _invert(c, np.atleast_1d(y))
    return float(times[0]) if np.isscalar(y) or np.ndim(y) == 0 else times


def _midpoint_map(f: Density1D, g: Density1D):
    """Map evaluated at the mass midpoint of each f-cell.

    The CDF convention spreads mass p_i over the cell (t_i - dt, t_i], so the
    consistent quadrature abscissa of cell i is its midpoint tau_i = t_i - dt/2
    at level y_i = F_i - f_i dt / 2; evaluating at the nodes instead biases
    the value by O(dt), which the quantile-pairing oracle resolves.
    """
    F, G = cdf(f), cdf(g)
    y_mid = F.F - 0.5 * f.p * f.t.dt
    mapped, cells = _invert(G, y_mid)
    tau = f.t.times() - 0.5 * f.t.dt
    return tau, mapped, cells


def w2_squared_1d(f: Density1D, g: Density1D, order: int = 2) -> tuple[float, TransportPlan1D]:
    """Squared quadratic Wasserstein distance and the monotone map from f to g.

    `order` is the transport cost exponent p; only the quadratic case is
    implemented (the monotone map is p-independent in 1D, but the values and
    adjoints here are specific to p = 2).
    """
    if order != 2:
        raise NotImplementedError("only the quadratic cost (order=2) is implemented")
    if f.t != g.t:
        raise ValidationError("densities must share one time axis")
    tau, mapped, _ = _midpoint_map(f, g)
    value = float(np.sum((tau - mapped) ** 2 * f.p) * f.t.dt)
    return value, TransportPlan1D(mapped)


def adjoint_source_1d(f: Density1D, g: Density1D) -> np.ndarray:
    """Derivative of w2_squared_1d with respect to the density f.

    Exact gradient of the discrete sum: with T = Ginv o F evaluated at the
    cell midpoints and U the upper-triangular ones matrix (realized as a
    reverse cumulative sum, halved on the diagonal where only half of f_k's
    mass sits below its own midpoint level),

        dW/df = U [ -2 f dt (tau - T) / g(T) ] dt + (tau - T)^2 dt.

    The divisor g(T) is the slope of the interpolation cell that produced T,
    which is what the inverse-function theorem requires discretely; flooring
    keeps it bounded away from zero.
    """
    if f.t != g.t:
        raise ValidationError("densities must share one time axis")
    tau, mapped, cells = _midpoint_map(f, g)
    dt = f.t.dt
    disp = tau - mapped
    w = -2.0 * f.p * dt * disp / g.p[cells]
    term_transport = (np.cumsum(w[::-1])[::-1] - 0.5 * w) * dt
    return term_transport + disp**2 * dt


def trace_w2_misfit(
    sim: ShotRecord,
    obs: ShotRecord,
    n: Normalization,
    per_trace: bool = False,
) -> MisfitEvaluation:
    """Trace-by-trace W2 misfit over a gather, with the adjoint source record.

    Per receiver both traces are scaled with shared parameters (the linear
    shift is the joint maximum over the whole gather unless per_trace=True,
    and auto-fitted c parameters come from the observed gather), turned into
    densities, and compared with the exact 1D distance. The per-trace adjoint
    sources are pulled back through the normalization chain.
    """
    if sim.samples.shape != obs.samples.shape or sim.time != obs.time:
        raise ValidationError("sim and obs records must have identical shape and time axis")

    n_eff = n
    if n.c is None and n.kind in (ScalingKind.EXPONENTIAL, ScalingKind.SIGN_SENSITIVE):
        peak = float(np.max(np.abs(obs.samples), initial=0.0))
        n_eff = replace(n, c=1.0 / peak if peak > 0 else 1.0)

    gather_pool = np.concatenate([sim.samples.ravel(), obs.samples.ravel()])
    dt = sim.time.dt
    total = 0.0
    adjoint = np.zeros_like(sim.samples)
    for r in range(sim.n_receivers):
        pool = np.concatenate([sim.samples[r], obs.samples[r]]) if per_trace else gather_pool
        f_scaled, f_info = scale(sim.samples[r], pool, n_eff)
        g_scaled, _ = scale(obs.samples[r], pool, n_eff)
        f_dens, f_mass = to_density(f_scaled, dt)
        g_dens, _ = to_density(g_scaled, dt)
        value, _ = w2_squared_1d(f_dens, g_dens)
        total += value
        a_density = adjoint_source_1d(f_dens, g_dens)
        adjoint[r] = chain_rule(a_density, f_info, f_mass, f_dens)
    return MisfitEvaluation(total, adjoint)
