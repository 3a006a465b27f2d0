"""First- and second-order coherences of the driven emitter.

Two-time correlators follow the quantum regression theorem: the conditioned
operator (sigma_ge rho for g1, the post-emission ground state for g2) is
propagated with the same generator as the density matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .emitter import (
    CW,
    DensityState,
    EmitterParams,
    PulseTrain,
    propagate,
    steady_state,
)
from .errors import InputError, ParameterError

G1, G2, TPI_PAR, TPI_PERP, VISIBILITY = "G1", "G2", "TPI_PAR", "TPI_PERP", "VISIBILITY"
KINDS = (G1, G2, TPI_PAR, TPI_PERP, VISIBILITY)


@dataclass
class CorrelationTrace:
    tau: np.ndarray
    values: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.values = np.asarray(self.values)
        if self.kind not in KINDS:
            raise InputError(f"unknown trace kind {self.kind!r}")
        if self.tau.shape != self.values.shape:
            raise InputError("tau and values must have the same shape")
        if np.any(np.diff(self.tau) <= 0):
            raise InputError("tau must be strictly increasing")

    def __call__(self, tau):
        """Linear interpolation, zero outside the sampled range."""
        return np.interp(tau, self.tau, self.values.real, left=0.0, right=0.0)


@dataclass
class TwoTimeMap:
    """Emission-time resolved correlators.

    ``g1[i, j]`` is sqrt(2 R T) <sigma_eg(t_i + tau_j) sigma_ge(t_i)> and
    ``g2ee[i, j]`` is <sigma_eg(t_i) sigma_ee(t_i + tau_j) sigma_ge(t_i)>.
    ``rho22`` is the excited population on the t grid.
    """

    t: np.ndarray
    tau: np.ndarray
    g1: np.ndarray
    g2ee: np.ndarray
    rho22: np.ndarray
    bs_product: float = 0.25


def _nu_squared(params, omega):
    return omega**2 - (1.0 / params.t1 - 1.0 / params.t2) ** 2 / 4.0


def g2_analytic(params: EmitterParams, omega: float, beta: float, tau):
    """Closed-form resonant g2 with empirical dip depth ``beta``.

    Over-damped drive (imaginary oscillation frequency) continues to
    cosh/sinh; the degenerate point uses the Taylor series in nu**2.
    """
    if not 0 <= beta <= 1:
        raise ParameterError("beta must lie in [0, 1]")
    tau = np.abs(np.asarray(tau, dtype=float))
    eta = 0.5 * (1.0 / params.t1 + 1.0 / params.t2)
    nu2 = _nu_squared(params, omega)
    z = nu2 * tau**2
    small = np.abs(z) < 1e-8
    out = np.empty_like(tau)
    # cos(nu t) + eta sin(nu t)/nu as a power series in z = nu^2 t^2
    zs, ts = z[small], tau[small]
    out[small] = (1 - zs / 2 + zs**2 / 24) + eta * ts * (1 - zs / 6 + zs**2 / 120)
    big = ~small
    if nu2 > 0:
        nu = np.sqrt(nu2)
        tb = tau[big]
        out[big] = np.cos(nu * tb) + eta / nu * np.sin(nu * tb)
    elif nu2 < 0:
        kappa = np.sqrt(-nu2)
        tb = tau[big]
        out[big] = np.cosh(kappa * tb) + eta / kappa * np.sinh(kappa * tb)
    return 1.0 - beta * np.exp(-eta * tau) * out


def _abs_grid(tau_grid):
    tau = np.asarray(tau_grid, dtype=float)
    a = np.abs(tau)
    uniq, inv = np.unique(a, return_inverse=True)
    return tau, uniq, inv


def _require_drive(omega):
    if not omega > 0:
        raise ParameterError("omega must be > 0 (steady-state emission vanishes at omega = 0)")


def g2_regression(params: EmitterParams, omega: float, tau_grid, detuning: float = 0.0,
                  rtol=1e-10, atol=1e-12) -> CorrelationTrace:
    _require_drive(omega)
    tau, uniq, inv = _abs_grid(tau_grid)
    ss = steady_state(params, omega, detuning)
    x = propagate(DensityState.ground().vector(), params, CW(omega, detuning), 0.0, uniq,
                  rtol=rtol, atol=atol)
    g = x[:, 1].real / ss.rho22
    return CorrelationTrace(tau, g[inv], G2, {"omega": omega, "t1": params.t1, "t2": params.t2})


def g1_regression(params: EmitterParams, omega: float, tau_grid, detuning: float = 0.0,
                  rtol=1e-10, atol=1e-12) -> CorrelationTrace:
    """Normalised steady-state g1; negative lags use g1(-tau) = conj(g1(tau))."""
    _require_drive(omega)
    tau, uniq, inv = _abs_grid(tau_grid)
    ss = steady_state(params, omega, detuning)
    # sigma_ge rho: (rho21, 0, rho22, 0)
    x0 = np.array([np.conj(ss.rho12), 0.0, ss.rho22, 0.0], dtype=complex)
    x = propagate(x0, params, CW(omega, detuning), 0.0, uniq, rtol=rtol, atol=atol)
    g = x[:, 2] / ss.rho22
    vals = g[inv]
    vals = np.where(tau < 0, np.conj(vals), vals)
    return CorrelationTrace(tau, vals, G1, {"omega": omega, "t1": params.t1, "t2": params.t2})


def coherent_fraction(params: EmitterParams, omega: float, detuning: float = 0.0) -> float:
    """|<sigma>|^2 / <sigma_ee>: the long-lag limit of g1."""
    ss = steady_state(params, omega, detuning)
    return abs(ss.rho12) ** 2 / ss.rho22


def periodic_state(params: EmitterParams, drive: PulseTrain, t0: float, settle_periods: int = 2):
    """State at ``t0`` after ``settle_periods`` of driving from the floor steady state."""
    start = t0 - settle_periods * drive.period
    x0 = steady_state(params, drive.omega_off).vector()
    if settle_periods <= 0:
        return x0
    return propagate(x0, params, drive, start, np.array([t0]))[0]


def _rows(params, drive, t, x_t, tau, bs_product, want_g1=True, want_g2=True):
    """Regression rows for one emission time; ``x_t`` is the state at t."""
    t_out = t + tau
    g1 = g2 = None
    if want_g1:
        x0 = np.array([x_t[3], 0.0, x_t[1], 0.0], dtype=complex)
        g1 = np.sqrt(2 * bs_product) * propagate(x0, params, drive, t, t_out)[:, 2]
    if want_g2:
        p = x_t[1].real
        if p > 0:
            cond = propagate(DensityState.ground().vector(), params, drive, t, t_out)[:, 1].real
            g2 = p * cond
        else:
            g2 = np.zeros(tau.size)
    return g1, g2


def two_time_map(params: EmitterParams, drive: PulseTrain, t_grid, tau_grid,
                 bs_product: float = 0.25, settle_periods: int = 2,
                 threads: int | None = None) -> TwoTimeMap:
    """Emission-time resolved g1 and g2 over ``t_grid`` x ``tau_grid`` (tau >= 0).

    The density matrix is settled for ``settle_periods`` periods before
    ``t_grid[0]`` so the grid samples the periodic regime.
    """
    if isinstance(drive, CW):
        raise InputError("two_time_map needs a PulseTrain drive")
    t = np.asarray(t_grid, dtype=float)
    tau = np.asarray(tau_grid, dtype=float)
    if np.any(np.diff(t) <= 0) or np.any(np.diff(tau) <= 0):
        raise InputError("grids must be strictly increasing")
    if tau[0] < 0:
        raise InputError("tau_grid must be non-negative")
    if t[-1] - t[0] < drive.period * (1 - 1e-9):
        raise InputError("t_grid must span at least one drive period")
    x_start = periodic_state(params, drive, t[0], settle_periods)
    states = propagate(x_start, params, drive, t[0], t)

    def work(i):
        return _rows(params, drive, t[i], states[i], tau, bs_product)

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(work, range(t.size)))
    else:
        rows = [work(i) for i in range(t.size)]
    g1 = np.array([r[0] for r in rows])
    g2 = np.array([r[1] for r in rows])
    return TwoTimeMap(t, tau, g1, g2, states[:, 1].real.copy(), bs_product)
