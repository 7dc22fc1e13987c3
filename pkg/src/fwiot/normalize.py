"""Turn signed seismic traces into strictly positive unit-mass densities.

Transport misfits need nonnegative, mass-balanced inputs. The scalings here
make a trace positive (linear shift, exponential, sign-sensitive blend, or
squaring), a small floor keeps it bounded away from zero, and division by the
total mass balances it. Every step carries exact derivative information so
adjoint sources can be chained back to the raw samples.

Conventions that matter for gradient checks:
  * the linear shift c1, the auto-fitted c parameters, and the floor are
    recomputed per evaluation from the data but treated as frozen constants
    when differentiating (they are almost-everywhere locally constant);
  * mass normalization contributes the exact rank-one correction, see
    chain_rule().
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ParameterError, ValidationError
from .grids import TimeAxis, _readonly, _require

# exp argument beyond this overflows float64
_EXP_LIMIT = 700.0


class ScalingKind(str, Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"
    SIGN_SENSITIVE = "sign_sensitive"
    SQUARE = "square"


@dataclass(frozen=True)
class Normalization:
    """Scaling recipe: kind, positive parameter c, relative floor.

    c is ignored by the linear and square kinds. When c is None the parameter
    is fitted per evaluation as 1/max|other| (the observed trace), which keeps
    exponentials in range. floor is relative to the mean scaled amplitude.
    """

    kind: ScalingKind = ScalingKind.LINEAR
    c: float | None = None
    floor: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "kind", ScalingKind(self.kind))
        if self.c is not None and not self.c > 0:
            raise ValidationError("scaling parameter c must be positive")
        if not self.floor > 0:
            raise ValidationError("floor must be positive")


@dataclass(frozen=True)
class Density1D:
    """Strictly positive trace density with unit mass: sum(p) * dt = 1."""

    t: TimeAxis
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        _require(p.shape == (self.t.nt,), "density length must match the time axis")
        _require(np.isfinite(p).all() and (p > 0).all(), "density must be finite and strictly positive")
        _require(abs(p.sum() * self.t.dt - 1.0) < 1e-9, "density mass must be 1")
        object.__setattr__(self, "p", _readonly(p))


@dataclass(frozen=True)
class ScaleInfo:
    """Bookkeeping from scale(): diagonal derivative d(scaled)/d(raw) and the frozen constants."""

    jac_diag: np.ndarray
    c_used: float
    floor_abs: float


def _resolve_c(n: Normalization, other: np.ndarray) -> float:
    if n.c is not None:
        return float(n.c)
    peak = float(np.max(np.abs(other))) if other.size else 0.0
    return 1.0 / peak if peak > 0 else 1.0


def scale(raw: np.ndarray, other: np.ndarray, n: Normalization) -> tuple[np.ndarray, ScaleInfo]:
    """Map a signed signal to a strictly positive one.

    `other` is the signal this one will be compared against; the linear kind
    shares its shift c1 = max{-raw, -other, 0} with it, and auto-fitted c
    parameters are derived from it. Returns the scaled signal (floored) and
    the elementwise derivative of the map.
    """
    raw = np.asarray(raw, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    if not np.isfinite(raw).all() or not np.isfinite(other).all():
        raise ValidationError("scale() requires finite inputs")

    if n.kind is ScalingKind.LINEAR:
        c1 = max(float(np.max(-raw, initial=0.0)), float(np.max(-other, initial=0.0)), 0.0)
        s = raw + c1
        jac = np.ones_like(raw)
        c_used = c1
    elif n.kind is ScalingKind.EXPONENTIAL:
        c2 = _resolve_c(n, other)
        if np.max(np.abs(c2 * raw), initial=0.0) > _EXP_LIMIT:
            raise ParameterError(
                f"exponential scaling overflows (|c2*f| > {_EXP_LIMIT:.0f}); use a smaller c2"
            )
        s = np.exp(c2 * raw)
        jac = c2 * s
        c_used = c2
    elif n.kind is ScalingKind.SIGN_SENSITIVE:
        c3 = _resolve_c(n, other)
        if np.max(np.abs(c3 * raw), initial=0.0) > _EXP_LIMIT:
            raise ParameterError(f"sign-sensitive scaling overflows; use a smaller c3")
        neg = raw < 0
        s = np.where(neg, np.exp(c3 * raw) / c3, raw + 1.0 / c3)
        jac = np.where(neg, np.exp(c3 * raw), 1.0)
        c_used = c3
    elif n.kind is ScalingKind.SQUARE:
        s = raw**2
        jac = 2.0 * raw
        c_used = 1.0
    else:  # pragma: no cover
        raise ValidationError(f"unknown scaling kind {n.kind}")

    mean_amp = float(np.mean(np.abs(s)))
    floor_abs = n.floor * (mean_amp if mean_amp > 0 else 1.0)
    return s + floor_abs, ScaleInfo(jac_diag=jac, c_used=c_used, floor_abs=floor_abs)


def to_density(scaled: np.ndarray, dt: float) -> tuple[Density1D, float]:
    """Divide by the total mass <f> = sum(f)*dt; returns the density and the mass."""
    scaled = np.asarray(scaled, dtype=np.float64)
    if not (scaled > 0).all():
        raise ValidationError("to_density requires a strictly positive signal")
    mass = float(scaled.sum() * dt)
    return Density1D(TimeAxis(scaled.size, dt), scaled / mass), mass


def chain_rule(adjoint_wrt_density: np.ndarray, info: ScaleInfo, mass: float, density: Density1D) -> np.ndarray:
    """Pull an adjoint source back through mass normalization and scaling.

    For p = s/mass the exact Jacobian transpose applied to a is
        (1/mass) * (a - dt * <a, p>)
    (the rank-one term removes the component along mass changes), followed by
    the diagonal scaling derivative.
    """
    a = np.asarray(adjoint_wrt_density, dtype=np.float64)
    dt = density.t.dt
    corrected = (a - dt * float(a @ density.p)) / mass
    return info.jac_diag * corrected


def split_positive_negative(raw: np.ndarray, dt: float) -> tuple[Density1D, Density1D]:
    """Separate-parts normalization f+/<f+>, f-/<f->, kept as a diagnostic only.

    The positive/negative split is not differentiable where samples change
    sign, so no adjoint is offered; a tiny floor keeps both parts valid
    densities even for one-signed signals.
    """
    raw = np.asarray(raw, dtype=np.float64)
    plus = np.maximum(raw, 0.0)
    minus = np.maximum(-raw, 0.0)
    out = []
    for part in (plus, minus):
        lift = 1e-12 * max(float(np.max(np.abs(raw), initial=0.0)), 1.0)
        dens, _ = to_density(part + lift, dt)
        out.append(dens)
    return out[0], out[1]
