"""1D layered-earth traveltime forward modeling and Herglotz-Wiechert inversion.

For a ray with horizontal slowness p turning at depth z_p (where the profile
slowness equals p), the surface-to-surface travel time and range are

    T(p) = 2 int_0^{z_p} s^2 / sqrt(s^2 - p^2) dz,
    X(p) = 2 p int_0^{z_p} dz / sqrt(s^2 - p^2),

and the profile comes back from the range curve through

    z(s) = (1/pi) int_0^{X(s)} arccosh(p/s) dX.

The vertical slowness vanishes like sqrt(z_p - z) at the turning depth; the
final integration cell substitutes w = sqrt(z_p - z), which makes the
integrand regular there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import ValidationError
from .grids import _readonly, _require


@dataclass(frozen=True)
class SlownessProfile:
    """Depth samples z (m, increasing from 0) and slowness s = 1/v (s/m)."""

    z: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        s = np.asarray(self.s, dtype=np.float64)
        _require(z.ndim == 1 and z.shape == s.shape and z.size >= 2, "need matching 1-D z and s, length >= 2")
        _require(z[0] >= 0 and (np.diff(z) > 0).all(), "depths must increase from >= 0")
        _require(np.isfinite(s).all() and (s > 0).all(), "slowness must be finite and positive")
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "s", _readonly(s))

    def velocity(self) -> np.ndarray:
        return 1.0 / self.s


def _turning_depth(profile: SlownessProfile, p: float) -> float:
    """First depth where the piecewise-linear slowness drops to p."""
    z, s = profile.z, profile.s
    if p >= s[0]:
        raise ValidationError(f"p={p:.6g} >= surface slowness {s[0]:.6g}: ray is evanescent")
    below = np.nonzero(s <= p)[0]
    if below.size == 0:
        raise ValidationError(f"p={p:.6g} never reached by the profile: no turning point")
    k = below[0]
    if s[k] == p:
        return float(z[k])
    # linear slowness inside the segment [k-1, k]
    frac = (s[k - 1] - p) / (s[k - 1] - s[k])
    return float(z[k - 1] + frac * (z[k] - z[k - 1]))


def ray_integrals(profile: SlownessProfile, p: float, tol: float = 1e-10) -> tuple[float, float]:
    """Travel time T(p) and horizontal range X(p) for one ray parameter.

    Integrates segment by segment over the piecewise-linear slowness. On the
    turning segment the substitution w = sqrt(z_p - z) regularizes the
    endpoint: there s = p + |b| w^2 with b the segment slope, so
    s^2 - p^2 = |b| w^2 (s + p) exactly and the transformed integrands are
    smooth (no cancellation at the turning depth).
    """
    z, s = profile.z, profile.s
    z_p = _turning_depth(profile, p)

    def slowness(zq):
        return np.interp(zq, z, s)

    def t_integrand(zq):
        sq = slowness(zq)
        return sq**2 / np.sqrt(sq**2 - p**2)

    def x_integrand(zq):
        sq = slowness(zq)
        return 1.0 / np.sqrt(sq**2 - p**2)

    T = 0.0
    X = 0.0
    z_lo = 0.0
    k_turn = 0
    for k, zk in enumerate(z[1:], start=1):
        if zk >= z_p - 1e-15:
            k_turn = k
            break
        T += quad(t_integrand, z_lo, zk, epsabs=tol, epsrel=tol)[0]
        X += quad(x_integrand, z_lo, zk, epsabs=tol, epsrel=tol)[0]
        z_lo = float(zk)

    w_max = np.sqrt(z_p - z_lo)
    if w_max > 0:
        b_abs = abs(s[k_turn] - s[k_turn - 1]) / (z[k_turn] - z[k_turn - 1])

        def s_turn(w):
            return p + b_abs * w * w

        # 2 w dz-integrand with eta = w sqrt(|b| (s + p)); the leading w cancels
        T += quad(lambda w: 2.0 * s_turn(w) ** 2 / np.sqrt(b_abs * (s_turn(w) + p)),
                  0.0, w_max, epsabs=tol, epsrel=tol)[0]
        X += quad(lambda w: 2.0 / np.sqrt(b_abs * (s_turn(w) + p)),
                  0.0, w_max, epsabs=tol, epsrel=tol)[0]
    return 2.0 * T, 2.0 * p * X


def herglotz_invert(p_samples: np.ndarray, x_samples: np.ndarray, s0: float) -> SlownessProfile:
    """Recover depths from a sampled range curve X(p).

    p_samples must decrease from the surface slowness s0 (where X = 0) and
    x_samples must increase; a non-monotone X means a low-velocity zone and
    the first-arrival curve no longer determines the profile. The integral in
    X uses the trapezoid cells of the sampling with arccosh evaluated at the
    cell-midpoint slowness; the integrand vanishes at the upper endpoint
    because arccosh(1) = 0.
    """
    p = np.asarray(p_samples, dtype=np.float64)
    x = np.asarray(x_samples, dtype=np.float64)
    _require(p.shape == x.shape and p.ndim == 1 and p.size >= 2, "need matching 1-D samples")
    if not (np.diff(p) < 0).all():
        raise ValidationError("p samples must be strictly decreasing")
    if not (np.diff(x) > 0).all():
        raise ValidationError("X(p) must be strictly increasing: profile not invertible "
                              "from first arrivals")
    if p[0] > s0 * (1 + 1e-12):
        raise ValidationError("first sample exceeds the surface slowness")

    p_full = np.concatenate(([s0], p)) if p[0] < s0 else p.copy()
    x_full = np.concatenate(([0.0], x)) if p[0] < s0 else x.copy()
    p_mid = 0.5 * (p_full[:-1] + p_full[1:])
    dx = np.diff(x_full)

    depths = np.empty(p_full.size)
    for m in range(p_full.size):
        if m == 0:
            depths[0] = 0.0
            continue
        ratio = np.maximum(p_mid[:m] / p_full[m], 1.0)
        depths[m] = np.sum(np.arccosh(ratio) * dx[:m]) / np.pi
    return SlownessProfile(depths, p_full)
