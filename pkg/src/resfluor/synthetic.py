"""Synthetic photon streams used as test oracles.

Resonance fluorescence of a two-level emitter under CW drive is a renewal
process: after each emission the emitter restarts in the ground state, and
the next emission time follows the waiting-time density
w(tau) = rho22_nj(tau) / t1, where rho22_nj evolves from the ground state
without the emission (jump) term. Detected streams are obtained by
thinning with a detection efficiency and a random 50:50 channel split.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq
from scipy.signal import fftconvolve

from .emitter import EmitterParams, build_liouvillian
from .errors import InputError
from .tagstream import PS_PER_NS, TagStream


def waiting_time_cdf(params: EmitterParams, omega: float, dt: float = 0.01, tol: float = 1e-12):
    """Grid ``tau`` and cumulative distribution of the inter-emission time."""
    if not omega > 0:
        raise InputError("omega must be > 0")
    gen = build_liouvillian(params, omega)
    gen[0, 1] = 0.0  # drop the jump term that refills the ground state
    step = expm(gen * dt)
    x = np.array([1, 0, 0, 0], dtype=complex)
    surv = [1.0]
    while surv[-1] > tol and len(surv) < 10_000_000:
        x = step @ x
        surv.append(float((x[0] + x[1]).real))
    tau = dt * np.arange(len(surv))
    cdf = 1.0 - np.array(surv)
    return tau, np.maximum.accumulate(cdf)


def cw_stream(params: EmitterParams, omega: float, n_emissions: int, efficiency: float = 0.5,
              seed: int = 0, channels=(0, 1), dt: float = 0.01) -> TagStream:
    """Detected photons of a CW-driven emitter split onto two channels."""
    if not 0 < efficiency <= 1:
        raise InputError("efficiency must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    tau, cdf = waiting_time_cdf(params, omega, dt)
    gaps = np.interp(rng.random(n_emissions) * cdf[-1], cdf, tau)
    t = np.cumsum(gaps)
    t = t[rng.random(t.size) < efficiency]
    ch = np.where(rng.random(t.size) < 0.5, channels[0], channels[1])
    ps = np.round(t * PS_PER_NS).astype(np.uint64)
    order = np.argsort(ps, kind="stable")
    return TagStream(ps[order], ch[order])


def pulsed_stream(n_pulses: int, period: float, pulse_end: float, t1: float,
                  laser_mean: float = 0.0, efficiency: float = 1.0, excite_at: float | None = None,
                  seed: int = 0, channels=(0, 1)) -> TagStream:
    """One emitter photon per pulse plus leaked laser photons.

    The emitter photon leaves ``excite_at`` (default pulse_end / 2) plus an
    exponential delay with mean ``t1`` after each pulse start. Laser
    photons are Poisson with mean ``laser_mean`` per pulse and uniform over
    the ON window [0, pulse_end).
    """
    if not (0 < pulse_end < period):
        raise InputError("need 0 < pulse_end < period")
    rng = np.random.default_rng(seed)
    base = period * np.arange(n_pulses)
    t0 = pulse_end / 2 if excite_at is None else excite_at
    emit = base + t0 + rng.exponential(t1, n_pulses)
    n_las = rng.poisson(laser_mean, n_pulses)
    las = np.repeat(base, n_las) + rng.random(int(n_las.sum())) * pulse_end
    t = np.concatenate([emit, las])
    t = t[rng.random(t.size) < efficiency]
    t.sort()
    ch = np.where(rng.random(t.size) < 0.5, channels[0], channels[1])
    return TagStream(np.round(t * PS_PER_NS).astype(np.uint64), ch)


def poisson_stream(rate: float, duration: float, channel: int = 0, seed: int = 0) -> TagStream:
    """Uncorrelated arrivals with ``rate`` per ns over ``duration`` ns."""
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate * duration)
    t = np.sort(rng.random(n) * duration)
    return TagStream(np.round(t * PS_PER_NS).astype(np.uint64), np.full(n, channel, np.uint8))


def expected_pulsed_g2(laser_mean: float, period: float, pulse_end: float, t1: float,
                       halfwidth: float | None = None, excite_at: float | None = None,
                       dt: float = 0.01, n_side: int = 3) -> float:
    """Central over mean side-peak coincidences expected from :func:`pulsed_stream`.

    Sums the lag densities of emitter-emitter, emitter-laser and laser-laser
    pairs from pulses j apart, so overlap between neighbouring peaks is
    included. ``halfwidth`` defaults to half a period.
    """
    hw = period / 2 if halfwidth is None else halfwidth
    t0 = pulse_end / 2 if excite_at is None else excite_at
    m = laser_mean
    # single-photon time densities within a period on a common grid
    span = period + 40 * t1
    x = np.arange(0.0, span, dt)
    f_emit = np.where(x >= t0, np.exp(-(x - t0) / t1) / t1, 0.0)
    f_las = np.where(x < pulse_end, 1.0 / pulse_end, 0.0)
    f_emit /= f_emit.sum() * dt
    f_las /= f_las.sum() * dt

    def lag_density(f, g):
        # density of (second - first) for independent draws, on lags -span..span
        return fftconvolve(g, f[::-1]) * dt

    lags = dt * (np.arange(2 * x.size - 1) - (x.size - 1))
    ee = lag_density(f_emit, f_emit)
    el = lag_density(f_emit, f_las) + lag_density(f_las, f_emit)
    ll = lag_density(f_las, f_las)

    def window(j_peak):
        total = 0.0
        lo, hi = j_peak * period - hw, j_peak * period + hw
        for j in range(-n_side - 3, n_side + 4):
            shift = lags + j * period
            w = (shift >= lo) & (shift < hi)
            pairs_ee = 0.0 if j == 0 else 1.0
            total += (pairs_ee * ee[w].sum() + m * el[w].sum() + m * m * ll[w].sum()) * dt
        return total

    side = np.mean([window(k) for k in range(1, n_side + 1)])
    return float(window(0) / side)


def laser_mean_for_g2(g2_zero: float, period: float, pulse_end: float, t1: float,
                      halfwidth: float | None = None, excite_at: float | None = None) -> float:
    """Laser photons per pulse for which :func:`expected_pulsed_g2` equals ``g2_zero``."""
    f = lambda m: expected_pulsed_g2(m, period, pulse_end, t1, halfwidth, excite_at) - g2_zero
    if f(0.0) >= 0:
        raise InputError(f"emitter photons alone already give g2(0) = {f(0.0) + g2_zero:.3f}")
    return float(brentq(f, 0.0, 10.0, xtol=1e-8))


def laser_fraction_for_g2(g2_zero: float) -> float:
    """Mean laser photons per pulse giving an ungated pulsed g2(0) of ``g2_zero``.

    One emitter photon per pulse and Poisson laser light with mean m give
    g2(0) = (2 m + m**2) / (1 + m)**2.
    """
    if not 0 <= g2_zero < 1:
        raise InputError("g2_zero must lie in [0, 1)")
    # (1 - g) m^2 + 2 (1 - g) m - g = 0
    a = 1 - g2_zero
    return float((-2 * a + np.sqrt(4 * a * a + 4 * a * g2_zero)) / (2 * a))
