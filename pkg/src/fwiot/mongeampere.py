"""Filtered almost-monotone finite differences for the transport Monge-Ampere equation.

Solves det(D^2 u) = f / g(grad u) with the non-homogeneous Neumann condition
grad u . nu = x . nu on the unit square, for a convex potential u whose
gradient is the optimal quadratic-cost map from f to g. The monotone operator
takes the smaller of two variational forms of the determinant, one aligned
with the grid axes and one rotated onto the stencil corners; each form
multiplies the positive parts of the second differences, adds the negative
parts, bounds everything away from zero by delta, and subtracts both the
right-hand side and the value u0 at a pinned node (which fixes the additive
gauge). A centred second-order operator is blended in through the cutoff
filter

    S(x) = x (|x|<=1), sign(x) (2-|x|) (1<=|x|<=2), 0 (|x|>=2)

scaled by epsilon, which restores second-order accuracy where the solution is
smooth while keeping the monotone branch in charge wherever the two disagree
strongly. A damped Newton iteration with the exact sparse Jacobian of the
scheme solves the system; the same Jacobian (transposed) later converts
displacement residuals into the derivative of the squared distance with
respect to the input density.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter
from scipy.sparse.linalg import spsolve

from .errors import MaConvergenceError, ValidationError
from .grids import Grid2D, _readonly, _require
from .normalize import Normalization, ScaleInfo, scale

_SQRT2 = np.sqrt(2.0)


def _trap_weights(n: int) -> np.ndarray:
    """Trapezoid quadrature weights on the node-centered unit-square grid.

    The grid carries boundary nodes, so a plain sum over-counts the rim by
    O(h); trapezoid weights keep masses and transport costs second-order
    consistent with the continuum integrals.
    """
    w1 = np.ones(n)
    w1[0] = w1[-1] = 0.5
    return np.outer(w1, w1)


def _mass(p: np.ndarray, h: float) -> float:
    return float((p * _trap_weights(p.shape[0])).sum() * h**2)


@dataclass(frozen=True)
class Density2D:
    """Positive density on an n-by-n unit-square grid, trapezoid mass 1."""

    grid: Grid2D
    p: np.ndarray

    def __post_init__(self):
        _require(self.grid.nx == self.grid.nz, "density grid must be square (n x n)")
        n = self.grid.nx
        _require(abs(self.grid.dx - 1.0 / (n - 1)) < 1e-12 and abs(self.grid.dz - self.grid.dx) < 1e-12,
                 "density grid must cover the unit square with uniform spacing")
        p = np.asarray(self.p, dtype=np.float64)
        _require(p.shape == (n, n), "density shape must match its grid")
        _require(np.isfinite(p).all() and (p > 0).all(), "density must be finite and strictly positive")
        _require(abs(_mass(p, self.grid.dx) - 1.0) < 1e-10, "density mass must be 1")
        object.__setattr__(self, "p", _readonly(p))

    @property
    def n(self) -> int:
        return self.grid.nx

    @property
    def h(self) -> float:
        return self.grid.dx

    @classmethod
    def from_values(cls, values: np.ndarray, floor_rel: float = 1e-10) -> "Density2D":
        """Build a density from any nonnegative array: floor, then normalize mass."""
        v = np.asarray(values, dtype=np.float64)
        _require(v.ndim == 2 and v.shape[0] == v.shape[1], "values must be square")
        n = v.shape[0]
        h = 1.0 / (n - 1)
        scale_ref = float(np.mean(np.abs(v)))
        v = v + floor_rel * (scale_ref if scale_ref > 0 else 1.0)
        v = v / _mass(v, h)
        return cls(Grid2D(n, n, h, h), v)


@dataclass(frozen=True)
class MaParams:
    """Scheme and Newton parameters; None means fit from the data and grid.

    delta bounds discrete second derivatives away from zero. Monotonicity
    theory asks for delta > K h / 2 with K the Lipschitz constant of f/g in
    the gradient variable; that K is estimated and recorded per solve, but
    the default delta is the practical h/2 floor because a theory-compliant
    value swamps the operator on floored seismic-style densities (see
    _resolve_params). epsilon_filter defaults to sqrt(h), large enough to
    dominate the monotone scheme's O(h) consistency error while still
    vanishing under refinement.
    """

    delta: float | None = None
    epsilon_filter: float | None = None
    newton_tol: float = 1e-8
    max_newton: int = 50
    damping: float = 0.5

    def __post_init__(self):
        if self.delta is not None:
            _require(self.delta > 0, "delta must be positive")
        if self.epsilon_filter is not None:
            _require(self.epsilon_filter > 0, "epsilon_filter must be positive")
        _require(0 < self.damping < 1, "damping factor must be in (0, 1)")
        _require(self.max_newton >= 1, "max_newton must be >= 1")


@dataclass(frozen=True)
class MaSolution:
    """Converged potential with solver diagnostics."""

    u: np.ndarray
    newton_iters: int
    residual_norm: float
    pinned_index: tuple[int, int]
    delta_used: float
    epsilon_used: float
    k_estimate: float

    def __post_init__(self):
        object.__setattr__(self, "u", _readonly(np.asarray(self.u, dtype=np.float64)))


def estimate_lipschitz(f: Density2D, g: Density2D) -> float:
    """Numerical Lipschitz constant of f(x)/g(y) in y from g's discrete gradient.

    Lip_y(f(x)/g(y)) = f(x) |grad g| / g^2; the maxima of |grad g| and 1/g^2
    sit at different points, so the bound is the pointwise maximum of the
    ratio, not the product of global extrema.
    """
    h = g.h
    gy1, gy2 = np.gradient(g.p, h, h)
    grad_mag = np.sqrt(gy1**2 + gy2**2)
    return float(f.p.max() * (grad_mag / g.p**2).max())


def _resolve_params(f: Density2D, g: Density2D, params: MaParams) -> tuple[MaParams, float]:
    """Fill in delta and epsilon; returns the resolved params and the K estimate.

    Theory wants delta > K h / 2, but for floored seismic-style densities the
    estimated K is so large that a compliant delta swamps the operator and no
    discrete solution exists. delta therefore defaults to the practical h/2
    regularization floor; K is still estimated and recorded per solve so the
    gap is visible in the diagnostics, and callers may pass a larger delta.
    """
    h = f.h
    k_est = estimate_lipschitz(f, g)
    delta = params.delta if params.delta is not None else h / 2.0
    eps = params.epsilon_filter if params.epsilon_filter is not None else np.sqrt(h)
    return replace(params, delta=delta, epsilon_filter=eps), k_est


def _filter_s(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cutoff filter S and its slope S' (1 inside, -1 on the ramps, 0 outside)."""
    s = np.zeros_like(x)
    ds = np.zeros_like(x)
    core = np.abs(x) <= 1.0
    up = (x > 1.0) & (x < 2.0)
    down = (x < -1.0) & (x > -2.0)
    s[core] = x[core]
    ds[core] = 1.0
    s[up] = -x[up] + 2.0
    s[down] = -x[down] - 2.0
    ds[up | down] = -1.0
    return s, ds


def _bilinear(gv: np.ndarray, q1: np.ndarray, q2: np.ndarray, h: float):
    """Bilinear interpolation of g at (q1, q2), clamped to the unit square.

    Returns values, both partial derivatives (zeroed in clamped directions),
    and the largest distance any query fell outside the square.
    """
    n = gv.shape[0]
    over = max(
        float(np.max(-q1, initial=0.0)), float(np.max(q1 - 1.0, initial=0.0)),
        float(np.max(-q2, initial=0.0)), float(np.max(q2 - 1.0, initial=0.0)),
    )
    c1 = np.clip(q1, 0.0, 1.0)
    c2 = np.clip(q2, 0.0, 1.0)
    i = np.minimum((c1 / h).astype(np.intp), n - 2)
    j = np.minimum((c2 / h).astype(np.intp), n - 2)
    a = c1 / h - i
    b = c2 / h - j
    g00 = gv[i, j]
    g10 = gv[i + 1, j]
    g01 = gv[i, j + 1]
    g11 = gv[i + 1, j + 1]
    val = (1 - a) * (1 - b) * g00 + a * (1 - b) * g10 + (1 - a) * b * g01 + a * b * g11
    d1 = ((1 - b) * (g10 - g00) + b * (g11 - g01)) / h
    d2 = ((1 - a) * (g01 - g00) + a * (g11 - g10)) / h
    live1 = (q1 > 0.0) & (q1 < 1.0)
    live2 = (q2 > 0.0) & (q2 < 1.0)
    return val, d1 * live1, d2 * live2, over


class _Assembly:
    """Residual, exact sparse Jacobian, and d(residual)/d(f) of the scheme."""

    def __init__(self, res, jac, dres_df, overshoot):
        self.res = res
        self.jac = jac
        self.dres_df = dres_df
        self.overshoot = overshoot


def _assemble(u: np.ndarray, f: Density2D, g: Density2D, params: MaParams,
              pinned: tuple[int, int], need_jac: bool, monotone_only: bool = False) -> _Assembly:
    n, h = f.n, f.h
    delta, eps = params.delta, params.epsilon_filter
    U = u
    W = f.p[1:-1, 1:-1]
    u0 = U[pinned]
    C = U[1:-1, 1:-1]

    d11 = (U[2:, 1:-1] - 2 * C + U[:-2, 1:-1]) / h**2
    d22 = (U[1:-1, 2:] - 2 * C + U[1:-1, :-2]) / h**2
    dvv = (U[2:, 2:] - 2 * C + U[:-2, :-2]) / (2 * h**2)
    dww = (U[2:, :-2] - 2 * C + U[:-2, 2:]) / (2 * h**2)
    d12 = (U[2:, 2:] + U[:-2, :-2] - U[2:, :-2] - U[:-2, 2:]) / (4 * h**2)

    q1 = (U[2:, 1:-1] - U[:-2, 1:-1]) / (2 * h)
    q2 = (U[1:-1, 2:] - U[1:-1, :-2]) / (2 * h)
    dv = (U[2:, 2:] - U[:-2, :-2]) / (2 * _SQRT2 * h)
    dw = (U[2:, :-2] - U[:-2, 2:]) / (2 * _SQRT2 * h)
    q1r = (dv + dw) / _SQRT2
    q2r = (dv - dw) / _SQRT2

    gv1, g1d1, g1d2, over1 = _bilinear(g.p, q1, q2, h)
    gv2, g2d1, g2d2, over2 = _bilinear(g.p, q1r, q2r, h)
    overshoot = max(over1, over2)

    p1 = np.maximum(d11, delta) * np.maximum(d22, delta) + np.minimum(d11, delta) + np.minimum(d22, delta)
    p2 = np.maximum(dvv, delta) * np.maximum(dww, delta) + np.minimum(dvv, delta) + np.minimum(dww, delta)
    ma1 = p1 - W / gv1 - u0
    ma2 = p2 - W / gv2 - u0
    use2 = ma2 < ma1
    m_mon = -np.where(use2, ma2, ma1)
    m_cen = -(d11 * d22 - d12**2) + W / gv1 + u0
    if monotone_only:
        s_val = np.zeros_like(m_mon)
        s_slope = np.zeros_like(m_mon)
    else:
        arg = (m_cen - m_mon) / eps
        s_val, s_slope = _filter_s(arg)
    m_filt = m_mon + eps * s_val

    res = np.zeros((n, n))
    res[1:-1, 1:-1] = m_filt
    # midpoint-corrected one-sided Neumann rows; corners add both edges
    res[0, :] += (U[0, :] - U[1, :]) / h + h / 2
    res[-1, :] += (U[-1, :] - U[-2, :]) / h - (1 - h / 2)
    res[:, 0] += (U[:, 0] - U[:, 1]) / h + h / 2
    res[:, -1] += (U[:, -1] - U[:, -2]) / h - (1 - h / 2)

    dres_df = np.zeros((n, n))
    inv_gv_mon = np.where(use2, 1.0 / gv2, 1.0 / gv1)
    dres_df[1:-1, 1:-1] = (1 - s_slope) * inv_gv_mon + s_slope * (1.0 / gv1)

    if not need_jac:
        return _Assembly(res, None, dres_df, overshoot)

    # ---- Jacobian assembly ------------------------------------------------
    ii, jj = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    rows_int = (ii * n + jj).ravel()
    pin_col = pinned[0] * n + pinned[1]

    def stencil_pairs(mon_off, cen_off):
        """Blend monotone and centred offset coefficients through the filter slope."""
        out = {}
        for off in set(mon_off) | set(cen_off):
            cm = mon_off.get(off, 0.0)
            cc = cen_off.get(off, 0.0)
            out[off] = (1 - s_slope) * cm + s_slope * cc
        return out

    # branch derivative factors
    a11 = np.where(d11 >= delta, np.maximum(d22, delta), 1.0)
    a22 = np.where(d22 >= delta, np.maximum(d11, delta), 1.0)
    avv = np.where(dvv >= delta, np.maximum(dww, delta), 1.0)
    aww = np.where(dww >= delta, np.maximum(dvv, delta), 1.0)
    gf11 = W * g1d1 / gv1**2
    gf12 = W * g1d2 / gv1**2
    gf21 = W * g2d1 / gv2**2
    gf22 = W * g2d2 / gv2**2

    # d(MA1)/du per offset (axis-aligned branch)
    ma1_off = {
        (1, 0): a11 / h**2 + gf11 / (2 * h),
        (-1, 0): a11 / h**2 - gf11 / (2 * h),
        (0, 1): a22 / h**2 + gf12 / (2 * h),
        (0, -1): a22 / h**2 - gf12 / (2 * h),
        (0, 0): -2 * (a11 + a22) / h**2,
    }
    # d(MA2)/du per offset (rotated branch)
    ma2_off = {
        (1, 1): avv / (2 * h**2) + (gf21 + gf22) / (4 * h),
        (-1, -1): avv / (2 * h**2) - (gf21 + gf22) / (4 * h),
        (1, -1): aww / (2 * h**2) + (gf21 - gf22) / (4 * h),
        (-1, 1): aww / (2 * h**2) - (gf21 - gf22) / (4 * h),
        (0, 0): -(avv + aww) / h**2,
    }
    # monotone operator derivative: minus the active branch
    mon_off = {}
    for off in set(ma1_off) | set(ma2_off):
        c1v = ma1_off.get(off, 0.0)
        c2v = ma2_off.get(off, 0.0)
        mon_off[off] = -np.where(use2, c2v, c1v)

    # centred operator derivative
    cen_off = {
        (1, 0): -d22 / h**2 - gf11 / (2 * h),
        (-1, 0): -d22 / h**2 + gf11 / (2 * h),
        (0, 1): -d11 / h**2 - gf12 / (2 * h),
        (0, -1): -d11 / h**2 + gf12 / (2 * h),
        (0, 0): 2 * (d11 + d22) / h**2,
        (1, 1): d12 / (2 * h**2),
        (-1, -1): d12 / (2 * h**2),
        (1, -1): -d12 / (2 * h**2),
        (-1, 1): -d12 / (2 * h**2),
    }

    blended = stencil_pairs(mon_off, cen_off)
    rows, cols, vals = [], [], []
    for (di, dj), coef in blended.items():
        rows.append(rows_int)
        cols.append(((ii + di) * n + (jj + dj)).ravel())
        vals.append(np.asarray(coef, dtype=np.float64).ravel())
    # gauge column: -u0 in both monotone branches, +u0 in the centred operator
    pin_coef = (1 - s_slope) * 1.0 + s_slope * 1.0
    rows.append(rows_int)
    cols.append(np.full(rows_int.shape, pin_col, dtype=np.intp))
    vals.append(np.asarray(pin_coef, dtype=np.float64).ravel())

    # boundary rows
    def edge(rows_idx, cols_own, cols_in):
        rows.append(rows_idx)
        cols.append(cols_own)
        vals.append(np.full(rows_idx.shape, 1.0 / h))
        rows.append(rows_idx)
        cols.append(cols_in)
        vals.append(np.full(rows_idx.shape, -1.0 / h))

    all_j = np.arange(n)
    edge(0 * n + all_j, 0 * n + all_j, 1 * n + all_j)                     # i = 0
    edge((n - 1) * n + all_j, (n - 1) * n + all_j, (n - 2) * n + all_j)   # i = n-1
    all_i = np.arange(n)
    edge(all_i * n + 0, all_i * n + 0, all_i * n + 1)                     # j = 0
    edge(all_i * n + (n - 1), all_i * n + (n - 1), all_i * n + (n - 2))   # j = n-1

    jac = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, n * n),
    ).tocsr()
    return _Assembly(res, jac, dres_df, overshoot)


def ma_residual(u: np.ndarray, f: Density2D, g: Density2D, params: MaParams) -> np.ndarray:
    """Residual of the filtered scheme at u (interior rows) and of the Neumann rows."""
    if f.grid != g.grid:
        raise ValidationError("densities must share one grid")
    _require(u.shape == f.p.shape, "potential shape must match the density grid")
    params, _ = _resolve_params(f, g, params)
    pinned = (f.n // 2, f.n // 2)
    asm = _assemble(np.asarray(u, dtype=np.float64), f, g, params, pinned, need_jac=False)
    if asm.overshoot > 10 * f.h:
        raise MaConvergenceError(
            f"discrete map leaves the target square by {asm.overshoot:.3g} (> 10 h)"
        )
    return asm.res


def _newton(u0, f, g, params, pinned, history, monotone_only=False):
    """Damped Newton: backtracking with factor `damping`, minimum step 1/64.

    Sufficient decrease is tested on the smooth L2 residual norm (the
    max-norm spikes transiently when filter/branch states flip and would
    reject good steps); convergence is still declared on the max-norm.
    Returns (u, iters) or raises MaConvergenceError with the history.
    """
    n, h = f.n, f.h

    def get(u, need_jac):
        return _assemble(u, f, g, params, pinned, need_jac, monotone_only)

    u = u0
    asm = get(u, True)
    res_norm = float(np.abs(asm.res).max())
    merit = float(np.sqrt(np.mean(asm.res**2)))
    history.append(res_norm)
    iters = 0
    while res_norm > params.newton_tol:
        if iters >= params.max_newton:
            raise MaConvergenceError(
                f"Newton did not converge in {params.max_newton} iterations "
                f"(residual {res_norm:.3g})", history)
        step = spsolve(asm.jac.tocsc(), -asm.res.ravel()).reshape(n, n)
        if not np.isfinite(step).all():
            raise MaConvergenceError("Newton step is non-finite (singular Jacobian?)", history)
        t = 1.0
        accepted = None
        while t >= 1.0 / 64.0 - 1e-12:
            cand = u + t * step
            casm = get(cand, False)
            cand_merit = float(np.sqrt(np.mean(casm.res**2)))
            if casm.overshoot <= 10 * h and cand_merit < merit * (1.0 - 1e-4 * t):
                accepted, merit = cand, cand_merit
                break
            t *= params.damping
        if accepted is None:
            raise MaConvergenceError(
                f"Newton line search stalled at residual {res_norm:.3g}", history)
        u = accepted
        asm = get(u, True)
        res_norm = float(np.abs(asm.res).max())
        history.append(res_norm)
        iters += 1
    return u, iters


def _blend(dens: Density2D, uniform: Density2D, t: float) -> Density2D:
    return Density2D(dens.grid, (1 - t) * uniform.p + t * dens.p)


def _solve_monotone(u_init, f, g, params, pinned, history):
    """Monotone-scheme solve, with mass-interpolation continuation fallback.

    Blending both densities from the uniform one (whose solution is the
    quadratic guess) walks Newton into its basin for strongly displaced or
    peaked data; the blend step adapts down to 1/64.
    """
    try:
        return _newton(u_init, f, g, params, pinned, history, monotone_only=True)
    except MaConvergenceError:
        pass
    uniform = Density2D.from_values(np.ones_like(f.p))
    u, iters = u_init, 0
    t, step = 0.0, 0.5
    while t < 1.0:
        t_try = min(1.0, t + step)
        try:
            u_new, it = _newton(u, _blend(f, uniform, t_try), _blend(g, uniform, t_try),
                                params, pinned, history, monotone_only=True)
        except MaConvergenceError as err:
            step *= 0.5
            if step < 1.0 / 64.0:
                raise MaConvergenceError(
                    f"monotone continuation stalled at blend t={t:.3g}", history) from err
            continue
        u, iters, t = u_new, iters + it, t_try
    return u, iters


def ma_solve(f: Density2D, g: Density2D, params: MaParams | None = None) -> MaSolution:
    """Solve the filtered scheme by damped Newton from the quadratic initial guess.

    The filtered operator is solved directly when Newton cooperates; when it
    stalls, the monotone scheme (a small perturbation of the filtered one,
    bounded by epsilon) is solved first, with density continuation if needed,
    and its solution warm-starts the filtered Newton.
    """
    if f.grid != g.grid:
        raise ValidationError("densities must share one grid")
    params = params or MaParams()
    params, k_est = _resolve_params(f, g, params)
    n, h = f.n, f.h
    pinned = (n // 2, n // 2)

    x1 = np.arange(n)[:, None] * h
    x2 = np.arange(n)[None, :] * h
    u_init = 0.5 * (x1**2 + x2**2)
    u_init = u_init - u_init[pinned]

    history: list[float] = []
    try:
        u, iters = _newton(u_init, f, g, params, pinned, history)
    except MaConvergenceError:
        u, iters = _solve_monotone(u_init, f, g, params, pinned, history)
        try:
            u, it_filt = _newton(u, f, g, params, pinned, history)
            iters += it_filt
        except MaConvergenceError:
            # ramp the filter in: the correction is bounded by epsilon, so
            # solutions at growing epsilon stay within Newton's basin
            for frac in (0.125, 0.25, 0.5, 1.0):
                p_eps = replace(params, epsilon_filter=params.epsilon_filter * frac)
                u, it_filt = _newton(u, f, g, p_eps, pinned, history)
                iters += it_filt

    res_norm = float(np.abs(_assemble(u, f, g, params, pinned, need_jac=False).res).max())
    return MaSolution(u, iters, res_norm, pinned, params.delta, params.epsilon_filter, k_est)


def _grad_ops(n: int, h: float) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Discrete gradient matrices on the flat grid: central interior rows and
    3-point second-order one-sided rim rows (exact for quadratics, so the
    identity map reports zero displacement)."""
    main = sp.diags([-0.5, 0.5], [-1, 1], shape=(n, n), format="lil") / h
    main[0, 0], main[0, 1], main[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    main[-1, -3], main[-1, -2], main[-1, -1] = 0.5 / h, -2.0 / h, 1.5 / h
    d = sp.csr_matrix(main)
    eye = sp.identity(n, format="csr")
    return sp.kron(d, eye, format="csr"), sp.kron(eye, d, format="csr")


def _displacements(u: np.ndarray, n: int, h: float):
    d1, d2 = _grad_ops(n, h)
    x1 = (np.arange(n)[:, None] * h * np.ones((1, n))).ravel()
    x2 = (np.ones((n, 1)) * np.arange(n)[None, :] * h).ravel()
    r1 = x1 - d1 @ u.ravel()
    r2 = x2 - d2 @ u.ravel()
    return d1, d2, r1, r2


def w2_squared_2d(f: Density2D, g: Density2D, sol: MaSolution) -> float:
    """Squared distance sum_i w_i f_i |x_i - grad u(x_i)|^2 h^2 (trapezoid weights)."""
    _, _, r1, r2 = _displacements(sol.u, f.n, f.h)
    w = _trap_weights(f.n).ravel()
    return float(np.sum(w * f.p.ravel() * (r1**2 + r2**2)) * f.h**2)


def w2_gradient_2d(f: Density2D, g: Density2D, sol: MaSolution,
                   params: MaParams | None = None) -> np.ndarray:
    """Derivative of w2_squared_2d with respect to the density f.

    Differentiating the scheme M[u; f] = 0 gives du/df = -J^{-1} dM/df, so on
    top of the pointwise squared-displacement term the gradient carries one
    transpose solve with the scheme Jacobian:

        dW/df = -(dM/df)^T J^{-T} dW/du + w |x - grad u|^2 h^2,
        dW/du = -2 sum_j D_j^T (w f . (x_j - D_j u)) h^2.
    """
    params = params or MaParams()
    params, _ = _resolve_params(f, g, params)
    n, h = f.n, f.h
    pinned = sol.pinned_index
    asm = _assemble(np.asarray(sol.u), f, g, params, pinned, need_jac=True)

    d1, d2, r1, r2 = _displacements(sol.u, n, h)
    w = _trap_weights(n).ravel()
    fp = f.p.ravel()
    dw_du = -2.0 * (d1.T @ (w * fp * r1) + d2.T @ (w * fp * r2)) * h**2
    z = spsolve(asm.jac.T.tocsc(), dw_du)
    direct = w * (r1**2 + r2**2) * h**2
    return (-asm.dres_df.ravel() * z + direct).reshape(n, n)


@dataclass(frozen=True)
class DensityChain:
    """Linearization bookkeeping from dataset_to_density, for adjoint pullback."""

    info: ScaleInfo
    resample: sp.csr_matrix
    smooth_sigma: float
    floor_abs: float
    mass: float
    density: Density2D
    data_shape: tuple[int, int]

    def pullback(self, adjoint_wrt_density: np.ndarray) -> np.ndarray:
        """Map d(misfit)/d(density) back to d(misfit)/d(raw samples)."""
        a = np.asarray(adjoint_wrt_density, dtype=np.float64).ravel()
        p = self.density.p.ravel()
        w = _trap_weights(self.density.n).ravel() * self.density.h**2
        a_q = (a - w * float(a @ p)) / self.mass
        if self.smooth_sigma > 0:
            # symmetric kernel: the same filter approximates the transpose
            a_q = gaussian_filter(a_q.reshape(self.density.p.shape), self.smooth_sigma,
                                  mode="reflect").ravel()
        a_s = self.resample.T @ a_q
        return (self.info.jac_diag.ravel() * a_s).reshape(self.data_shape)


@lru_cache(maxsize=16)
def _resample_matrix(n_rows: int, n_cols: int, n_out: int) -> sp.csr_matrix:
    """Bilinear map from an (n_rows, n_cols) sample grid onto n_out x n_out unit square."""
    rows, cols, vals = [], [], []
    sr = (n_rows - 1) / (n_out - 1)
    sc = (n_cols - 1) / (n_out - 1)
    for i in range(n_out):
        fr = i * sr
        r0 = min(int(np.floor(fr)), n_rows - 2) if n_rows > 1 else 0
        ar = fr - r0
        for j in range(n_out):
            fc = j * sc
            c0 = min(int(np.floor(fc)), n_cols - 2) if n_cols > 1 else 0
            ac = fc - c0
            out = i * n_out + j
            for (dr, wr) in ((0, 1 - ar), (1, ar)):
                for (dc, wc) in ((0, 1 - ac), (1, ac)):
                    w = wr * wc
                    if w != 0.0:
                        rows.append(out)
                        cols.append((r0 + dr) * n_cols + (c0 + dc))
                        vals.append(w)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_out**2, n_rows * n_cols)).tocsr()


def dataset_to_density(
    samples: np.ndarray,
    other: np.ndarray,
    n: Normalization,
    smooth_sigma: float = 1.0,
    grid_n: int = 64,
) -> DensityChain:
    """Turn a full gather (receiver x time) into a unit-square density.

    Receiver index and time map to the two coordinates of [0,1]^2 (anisotropy
    absorbed by the rescaling); the samples are scaled positive with
    parameters shared with `other`, bilinearly resampled onto a grid_n square
    grid, optionally Gaussian-smoothed (reflected boundaries), floored, and
    mass-normalized. The returned chain carries everything needed to pull an
    adjoint source back to the raw samples.
    """
    samples = np.asarray(samples, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    _require(samples.ndim == 2, "samples must be a 2-D gather")
    _require(grid_n >= 8, "density grid must have at least 8 nodes per side")

    pool = np.concatenate([samples.ravel(), other.ravel()])
    scaled, info = scale(samples, pool, n)
    B = _resample_matrix(*samples.shape, grid_n)
    q = (B @ scaled.ravel()).reshape(grid_n, grid_n)
    if smooth_sigma > 0:
        q = gaussian_filter(q, smooth_sigma, mode="reflect")
    mean_q = float(np.mean(np.abs(q)))
    floor_abs = n.floor * (mean_q if mean_q > 0 else 1.0)
    q = q + floor_abs
    h = 1.0 / (grid_n - 1)
    mass = _mass(q, h)
    dens = Density2D(Grid2D(grid_n, grid_n, h, h), q / mass)
    return DensityChain(info, B, smooth_sigma, floor_abs, mass, dens, samples.shape)
