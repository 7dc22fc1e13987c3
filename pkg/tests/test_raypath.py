import numpy as np
import pytest

from fwiot.errors import ValidationError
from fwiot.raypath import SlownessProfile, herglotz_invert, ray_integrals


def linear_profile(v0=2000.0, grad=0.5, z_max=4000.0, points=4001):
    z = np.linspace(0.0, z_max, points)
    return SlownessProfile(z, 1.0 / (v0 + grad * z))


def oracle_integrals(p, v0=2000.0, grad=0.5, n_points=2_000_000):
    """Dense midpoint rule in the regularized variable w = sqrt(z_p - z)."""
    z_p = (1.0 / p - v0) / grad
    w = np.sqrt(z_p) * (np.arange(n_points) + 0.5) / n_points
    zq = z_p - w * w
    s = 1.0 / (v0 + grad * zq)
    eta = np.sqrt(s * s - p * p)
    dw = np.sqrt(z_p) / n_points
    T = np.sum(2 * w * s * s / eta) * dw * 2.0
    X = np.sum(2 * w / eta) * dw * 2.0 * p
    return T, X


def test_deeper_rays_travel_farther():
    prof = linear_profile()
    p_shallow = 1.0 / 2300.0
    p_deep = 1.0 / 2900.0
    assert ray_integrals(prof, p_deep)[1] >= ray_integrals(prof, p_shallow)[1]


def test_integrals_match_fine_quadrature_oracle():
    prof = linear_profile()
    for z_turn in (800.0, 2000.0, 3100.0):
        p = 1.0 / (2000.0 + 0.5 * z_turn)
        T, X = ray_integrals(prof, p)
        To, Xo = oracle_integrals(p)
        assert abs(T - To) / To < 1e-4
        assert abs(X - Xo) / Xo < 1e-4


def test_constant_velocity_has_no_turning_point():
    z = np.linspace(0.0, 1000.0, 101)
    prof = SlownessProfile(z, np.full(101, 1.0 / 2000.0))
    with pytest.raises(ValidationError, match="turning"):
        ray_integrals(prof, 1.0 / 2500.0)
    with pytest.raises(ValidationError, match="evanescent"):
        ray_integrals(prof, 1.0 / 1500.0)


def test_quadrature_refinement_converges():
    prof = linear_profile()
    p = 1.0 / 2800.0
    T1, X1 = ray_integrals(prof, p, tol=1e-8)
    T2, X2 = ray_integrals(prof, p, tol=5e-9)
    assert abs(T2 - T1) / T1 < 1e-6
    assert abs(X2 - X1) / X1 < 1e-6


def test_herglotz_surface_depth_and_endpoint():
    prof = linear_profile()
    zs = np.linspace(0.0, 2000.0, 21)[1:]
    ps = 1.0 / (2000.0 + 0.5 * zs)
    xs = np.array([ray_integrals(prof, p)[1] for p in ps])
    rec = herglotz_invert(ps, xs, s0=1.0 / 2000.0)
    assert rec.z[0] == 0.0  # surface pins to zero depth
    # arccosh(1) = 0 at the endpoint: refining only the final cell leaves the
    # depth there nearly unchanged because the integrand vanishes at p = s
    coarse_idx = list(range(0, 19, 2)) + [19]
    rec_coarse = herglotz_invert(ps[coarse_idx], xs[coarse_idx], s0=1.0 / 2000.0)
    assert rec.z[-1] == pytest.approx(rec_coarse.z[-1], rel=0.02)


def test_roundtrip_recovers_linear_velocity():
    prof = linear_profile()
    zs = np.linspace(0.0, 2500.0, 26)[1:]
    ps = 1.0 / (2000.0 + 0.5 * zs)
    xs = np.array([ray_integrals(prof, p)[1] for p in ps])
    rec = herglotz_invert(ps, xs, s0=1.0 / 2000.0)
    v_rec = rec.velocity()
    v_true = 2000.0 + 0.5 * rec.z
    assert np.max(np.abs(v_rec - v_true) / v_true) < 0.01


def test_non_monotone_range_curve_rejected():
    ps = np.array([4e-4, 3e-4, 2e-4])
    xs = np.array([100.0, 300.0, 250.0])
    with pytest.raises(ValidationError, match="increasing"):
        herglotz_invert(ps, xs, s0=5e-4)
