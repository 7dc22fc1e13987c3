"""Shared fixtures and oracles for the test suite."""

import numpy as np
import pytest

from fwiot.grids import TimeAxis
from fwiot.normalize import Density1D


def smooth_density(rng, nt, dt, kernel_sigma=6.0, base=0.3):
    """Random smooth strictly positive unit-mass trace density."""
    x = rng.standard_normal(nt)
    k = np.exp(-0.5 * (np.arange(-20, 21) / kernel_sigma) ** 2)
    k /= k.sum()
    x = np.convolve(x, k, mode="same")
    x = x - x.min() + base
    return Density1D(TimeAxis(nt, dt), x / (x.sum() * dt))


def quantile_pairing_w2(f: Density1D, g: Density1D, levels_per_sample=10) -> float:
    """Brute-force 1D OT: pair quantiles at levels (k - 1/2) / K, K = levels * nt.

    Independent inverse-CDF implementation (np.interp on the cumulative
    masses with the left cell anchor); exact for the piecewise-uniform cell
    measures up to the O((1/K)^2) midpoint rule.
    """
    t = f.t.times()
    K = levels_per_sample * f.t.nt

    def inv(dens, y):
        F = np.cumsum(dens.p) * dens.t.dt
        F /= F[-1]
        xp = np.concatenate(([0.0], F))
        tp = np.concatenate(([t[0] - dens.t.dt], t))
        return np.interp(y, xp, tp)

    y = (np.arange(K) + 0.5) / K
    return float(np.sum((inv(f, y) - inv(g, y)) ** 2) / K)


def ricker_series(t, peak_frequency, delay):
    arg = (np.pi * peak_frequency * (t - delay)) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def first_break(trace, dt, threshold=0.01):
    """Index-time of the first sample exceeding threshold * max |trace|."""
    idx = np.nonzero(np.abs(trace) > threshold * np.abs(trace).max())[0]
    return idx[0] * dt


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)
