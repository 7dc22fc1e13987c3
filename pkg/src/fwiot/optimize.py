"""L-BFGS with strong-Wolfe line search, plus the model-space driver.

The core works on flat arrays and an objective returning (value, gradient).
Directions come from the standard two-loop recursion with gamma scaling;
curvature pairs with y's <= 1e-12 |y||s| are discarded. With box bounds every
trial point is projected before evaluation, so objectives that validate their
inputs (velocity bounds, CFL) never see an infeasible model.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .grids import VelocityModel, _require


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iters: int = 100
    grad_tol: float = 0.0
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    initial_step: float | None = None
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        _require(0 < self.wolfe_c1 < self.wolfe_c2 < 1, "need 0 < c1 < c2 < 1")
        _require(self.memory >= 1, "memory must be >= 1")
        _require(self.max_iters >= 1, "max_iters must be >= 1")


@dataclass(frozen=True)
class InversionState:
    """One history row of the minimization."""

    iter: int
    misfit: float
    grad_norm: float
    relative_misfit: float
    step_length: float
    wall_seconds: float


def _two_loop(g: np.ndarray, pairs: list[tuple[np.ndarray, np.ndarray, float]]) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _line_search(phi, f0, slope0, a1, c1, c2, max_expand=20, max_zoom=30):
    """Strong-Wolfe search on phi(a) = (value, slope); returns (a, f, g) or None."""

    def zoom(a_lo, f_lo, s_lo, a_hi, f_hi):
        for _ in range(max_zoom):
            # quadratic interpolation with bisection fallback
            denom = 2.0 * (f_hi - f_lo - s_lo * (a_hi - a_lo))
            a = a_lo + (-s_lo * (a_hi - a_lo) ** 2 / denom if denom != 0 else 0.0)
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            if not (lo + 0.1 * (hi - lo) <= a <= hi - 0.1 * (hi - lo)):
                a = 0.5 * (a_lo + a_hi)
            f_a, s_a, extra = phi(a)
            if f_a > f0 + c1 * a * slope0 or f_a >= f_lo:
                a_hi, f_hi = a, f_a
            else:
                if abs(s_a) <= -c2 * slope0:
                    return a, f_a, extra
                if s_a * (a_hi - a_lo) >= 0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, s_lo = a, f_a, s_a
            if abs(a_hi - a_lo) < 1e-16:
                return a, f_a, extra
        return a, f_a, extra

    a_prev, f_prev, s_prev = 0.0, f0, slope0
    a = a1
    extra_prev = None
    for i in range(max_expand):
        f_a, s_a, extra = phi(a)
        if f_a > f0 + c1 * a * slope0 or (i > 0 and f_a >= f_prev):
            return zoom(a_prev, f_prev, s_prev, a, f_a)
        if abs(s_a) <= -c2 * slope0:
            return a, f_a, extra
        if s_a >= 0:
            return zoom(a, f_a, s_a, a_prev, f_prev)
        a_prev, f_prev, s_prev, extra_prev = a, f_a, s_a, extra
        a *= 2.0
    return None


def lbfgs(fun, x0: np.ndarray, cfg: LbfgsConfig, on_accept=None):
    """Minimize fun(x) -> (value, gradient) from x0.

    Returns (x, history, status) with status one of 'grad_tol', 'max_iters',
    'line_search_failure'. History rows are InversionState records; the
    misfit decreases strictly across accepted iterations (Wolfe condition).
    on_accept(iter, x) fires after each accepted step.
    """
    lo, hi = cfg.bounds if cfg.bounds is not None else (-np.inf, np.inf)

    def project(x):
        return np.clip(x, lo, hi) if cfg.bounds is not None else x

    def safe_eval(x):
        f, g = fun(x)
        g = np.asarray(g, dtype=np.float64).ravel()
        if not np.isfinite(f) or not np.isfinite(g).all():
            raise NumericalError("objective returned non-finite value or gradient",
                                 state={"x": x.copy(), "f": f})
        return float(f), g

    t_start = _time.perf_counter()
    x = project(np.asarray(x0, dtype=np.float64).ravel().copy())
    f, g = safe_eval(x)
    f_first = f if f != 0 else 1.0
    history = [InversionState(0, f, float(np.abs(g).max()), f / f_first, 0.0,
                              _time.perf_counter() - t_start)]
    pairs: list[tuple[np.ndarray, np.ndarray, float]] = []
    status = "max_iters"

    for it in range(1, cfg.max_iters + 1):
        gnorm = float(np.abs(g).max())
        if gnorm <= cfg.grad_tol:
            status = "grad_tol"
            break
        p = _two_loop(g, pairs)
        slope = float(g @ p)
        if slope >= 0:
            # direction lost descent (numerical); restart from steepest descent
            pairs.clear()
            p = -g
            slope = float(g @ p)

        if it == 1:
            a1 = cfg.initial_step if cfg.initial_step is not None else min(
                1.0, 1.0 / max(float(np.abs(g).max()), 1e-30))
        else:
            a1 = 1.0

        def phi(a):
            xa = project(x + a * p)
            fa, ga = safe_eval(xa)
            return fa, float(ga @ p), (xa, ga)

        hit = _line_search(phi, f, slope, a1, cfg.wolfe_c1, cfg.wolfe_c2)
        if hit is None or hit[1] >= f:
            status = "line_search_failure"
            break
        a, f_new, (x_new, g_new) = hit

        s = x_new - x
        y = g_new - g
        ys = float(y @ s)
        if ys > 1e-12 * np.linalg.norm(y) * np.linalg.norm(s):
            pairs.append((s, y, 1.0 / ys))
            if len(pairs) > cfg.memory:
                pairs.pop(0)
        x, f, g = x_new, f_new, g_new
        history.append(InversionState(it, f, float(np.abs(g).max()), f / f_first, a,
                                      _time.perf_counter() - t_start))
        if on_accept is not None:
            on_accept(it, x)
        if float(np.abs(g).max()) <= cfg.grad_tol:
            status = "grad_tol"
            break
    return x, history, status


def lbfgs_minimize(objective, x0: VelocityModel, cfg: LbfgsConfig,
                   callback=None, on_accept=None):
    """Model-space wrapper: objective(VelocityModel) -> (J, GradientField).

    Box bounds default to the model's velocity bounds converted to squared
    slowness, which keeps every line-search trial CFL-valid. The first step
    is scaled so that step * max|g| is about 1% of the admissible m range.
    callback(n_eval, model, J) fires per objective evaluation;
    on_accept(iter, model) per accepted L-BFGS step.
    """
    grid = x0.grid
    m_lo = 1.0 / x0.vmax**2
    m_hi = 1.0 / x0.vmin**2
    bounds = cfg.bounds if cfg.bounds is not None else (m_lo, m_hi)

    state = {"n": 0}

    def fun(x):
        model = VelocityModel(grid, x.reshape(grid.shape), vmin=x0.vmin, vmax=x0.vmax)
        J, gf = objective(model)
        state["n"] += 1
        if callback is not None:
            callback(state["n"], model, J)
        return J, gf.values.ravel()

    cfg_eff = LbfgsConfig(
        memory=cfg.memory, max_iters=cfg.max_iters, grad_tol=cfg.grad_tol,
        wolfe_c1=cfg.wolfe_c1, wolfe_c2=cfg.wolfe_c2,
        initial_step=cfg.initial_step, bounds=bounds,
    )
    if cfg_eff.initial_step is None:
        _, g0 = fun(x0.m.ravel())
        gmax = max(float(np.abs(g0).max()), 1e-30)
        cfg_eff = LbfgsConfig(
            memory=cfg.memory, max_iters=cfg.max_iters, grad_tol=cfg.grad_tol,
            wolfe_c1=cfg.wolfe_c1, wolfe_c2=cfg.wolfe_c2,
            initial_step=0.01 * (bounds[1] - bounds[0]) / gmax, bounds=bounds,
        )

    accept_hook = None
    if on_accept is not None:
        def accept_hook(it, x):
            on_accept(it, VelocityModel(grid, x.reshape(grid.shape), vmin=x0.vmin, vmax=x0.vmax))

    x, history, status = lbfgs(fun, x0.m.ravel(), cfg_eff, on_accept=accept_hook)
    final = VelocityModel(grid, x.reshape(grid.shape), vmin=x0.vmin, vmax=x0.vmax)
    return final, history, status
