"""Driven two-level emitter: Bloch-equation generator, time evolution, steady state.

State vectors are ordered (rho11, rho22, rho12, rho21) with 1 = ground and
2 = excited, in the frame rotating at the drive frequency. Times are in ns,
rates and Rabi frequencies in rad/ns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import kernels
from .errors import ConvergenceError, InputError, ParameterError

RTOL = 1e-8
ATOL = 1e-10

# drive coupling: d/dOmega of the generator
_DRIVE = np.array(
    [
        [0, 0, 0.5j, -0.5j],
        [0, 0, -0.5j, 0.5j],
        [0.5j, -0.5j, 0, 0],
        [-0.5j, 0.5j, 0, 0],
    ],
    dtype=complex,
)


@dataclass(frozen=True)
class EmitterParams:
    """Lifetime ``t1`` and optical coherence time ``t2`` (ns)."""

    t1: float
    t2: float

    def __post_init__(self):
        if not (np.isfinite(self.t1) and self.t1 > 0):
            raise ParameterError(f"t1 must be > 0, got {self.t1}")
        if not (np.isfinite(self.t2) and self.t2 > 0):
            raise ParameterError(f"t2 must be > 0, got {self.t2}")
        if self.t2 > 2 * self.t1 * (1 + 1e-12):
            raise ParameterError(f"t2={self.t2} exceeds the radiative limit 2*t1={2 * self.t1}")

    @property
    def gamma_sp(self) -> float:
        """Amplitude decay rate, half the population decay rate."""
        return 0.5 / self.t1

    @property
    def gamma(self) -> float:
        """Total dephasing rate of the optical coherence."""
        return 1.0 / self.t2

    @property
    def gamma_pure(self) -> float:
        return max(1.0 / self.t2 - 0.5 / self.t1, 0.0)


@dataclass(frozen=True)
class CW:
    omega: float
    detuning: float = 0.0

    def __post_init__(self):
        if not self.omega >= 0:
            raise ParameterError(f"omega must be >= 0, got {self.omega}")

    def omega_at(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.omega)

    def segments(self, t0, t1):
        return (np.array([t0], float), np.array([t1], float),
                np.array([self.omega], float), np.array([self.omega], float))


@dataclass(frozen=True)
class PulseTrain:
    """EOM-style pulse train.

    Each period starts with a linear rise from ``omega_off`` to ``omega_on``
    over ``edge_time``; the fall starts at ``pulse_width`` and also lasts
    ``edge_time``, so the pulse area above the floor is
    ``(omega_on - omega_off) * pulse_width`` regardless of the edge.
    """

    omega_on: float
    omega_off: float
    pulse_width: float
    period: float
    edge_time: float = 0.3

    def __post_init__(self):
        if not (self.omega_on >= 0 and self.omega_off >= 0):
            raise ParameterError("omega_on and omega_off must be >= 0")
        if not 0 < self.pulse_width < self.period:
            raise ParameterError("need 0 < pulse_width < period")
        if not 0 <= self.edge_time < self.pulse_width:
            raise ParameterError("need 0 <= edge_time < pulse_width")
        if self.pulse_width + self.edge_time > self.period:
            raise ParameterError("falling edge runs past the period")

    @property
    def pulse_end(self) -> float:
        """Time within a period at which the falling edge completes."""
        return self.pulse_width + self.edge_time

    def _knots(self):
        e, w = self.edge_time, self.pulse_width
        lo, hi = self.omega_off, self.omega_on
        return [(0.0, e, lo, hi), (e, w, hi, hi), (w, w + e, hi, lo), (w + e, self.period, lo, lo)]

    def omega_at(self, t):
        t = np.asarray(t, dtype=float)
        ph = np.mod(t, self.period)
        out = np.full_like(ph, self.omega_off)
        for a, b, wa, wb in self._knots():
            if b <= a:
                continue
            m = (ph >= a) & (ph < b)
            out[m] = wa + (wb - wa) * (ph[m] - a) / (b - a)
        return out

    def segments(self, t0, t1):
        """Linear-drive segments covering [t0, t1], split at every edge."""
        k0 = int(np.floor(t0 / self.period))
        k1 = int(np.ceil(t1 / self.period))
        s0, s1, w0, w1 = [], [], [], []
        for k in range(k0, k1 + 1):
            base = k * self.period
            for a, b, wa, wb in self._knots():
                a, b = base + a, base + b
                if b <= a or b <= t0 or a >= t1:
                    continue
                ca, cb = max(a, t0), min(b, t1)
                slope = (wb - wa) / (b - a)
                s0.append(ca)
                s1.append(cb)
                w0.append(wa + slope * (ca - a))
                w1.append(wa + slope * (cb - a))
        # fold slivers below float resolution into a neighbour so integrators never
        # see a vanishing step; the drive changes only at that resolution
        i = 0
        while len(s0) > 1 and i < len(s0):
            if s1[i] - s0[i] <= 1e-12 * max(1.0, abs(s1[i])):
                if i > 0:
                    s1[i - 1] = s1[i]
                else:
                    s0[1] = s0[0]
                for col in (s0, s1, w0, w1):
                    del col[i]
            else:
                i += 1
        return np.array(s0), np.array(s1), np.array(w0), np.array(w1)


DriveProtocol = Union[CW, PulseTrain]


@dataclass(frozen=True)
class DensityState:
    rho11: float
    rho22: float
    rho12: complex

    def __post_init__(self):
        if abs(self.rho11 + self.rho22 - 1) > 1e-9:
            raise ParameterError("populations must sum to 1")
        if not (-1e-9 <= self.rho11 <= 1 + 1e-9 and -1e-9 <= self.rho22 <= 1 + 1e-9):
            raise ParameterError("populations must lie in [0, 1]")
        if abs(self.rho12) ** 2 > self.rho11 * self.rho22 + 1e-9:
            raise ParameterError("coherence violates positivity")

    @classmethod
    def ground(cls):
        return cls(1.0, 0.0, 0j)

    @classmethod
    def excited(cls):
        return cls(0.0, 1.0, 0j)

    @classmethod
    def from_vector(cls, x, check=True):
        x = np.asarray(x)
        if not check:
            obj = object.__new__(cls)
            object.__setattr__(obj, "rho11", float(x[0].real))
            object.__setattr__(obj, "rho22", float(x[1].real))
            object.__setattr__(obj, "rho12", complex(x[2]))
            return obj
        return cls(float(x[0].real), float(x[1].real), complex(x[2]))

    def vector(self):
        return np.array([self.rho11, self.rho22, self.rho12, np.conj(self.rho12)], dtype=complex)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    rho11: np.ndarray
    rho22: np.ndarray
    rho12: np.ndarray

    def __len__(self):
        return self.times.size

    def __getitem__(self, i):
        return DensityState.from_vector([self.rho11[i], self.rho22[i], self.rho12[i]], check=False)

    @property
    def states(self):
        return [self[i] for i in range(len(self))]


def _check_params(params):
    if not isinstance(params, EmitterParams):
        raise ParameterError("params must be an EmitterParams")


def generator_parts(params: EmitterParams, detuning: float = 0.0):
    """Return (drift, drive) with generator = drift + omega * drive."""
    _check_params(params)
    g = 1.0 / params.t2
    drift = np.zeros((4, 4), dtype=complex)
    drift[0, 1] = 2 * params.gamma_sp
    drift[1, 1] = -2 * params.gamma_sp
    drift[2, 2] = -g - 1j * detuning
    drift[3, 3] = -g + 1j * detuning
    return drift, _DRIVE.copy()


def build_liouvillian(params: EmitterParams, omega: float, detuning: float = 0.0) -> np.ndarray:
    """4x4 generator acting on (rho11, rho22, rho12, rho21)."""
    if not omega >= 0:
        raise ParameterError(f"omega must be >= 0, got {omega}")
    drift, drive = generator_parts(params, detuning)
    return drift + omega * drive


def propagate(x0, params: EmitterParams, drive, t_start: float, t_out, detuning=None,
              rtol=RTOL, atol=ATOL) -> np.ndarray:
    """Evolve an arbitrary 4-vector (state or regression operator) under ``drive``.

    ``t_out`` must be sorted with ``t_out[0] >= t_start``. Returns a
    (len(t_out), 4) complex array.
    """
    if detuning is None:
        detuning = getattr(drive, "detuning", 0.0)
    drift, coupling = generator_parts(params, detuning)
    t_out = np.ascontiguousarray(t_out, dtype=float)
    t_end = float(t_out[-1]) if t_out.size else t_start
    if t_end <= t_start:
        return np.tile(np.asarray(x0, dtype=complex), (t_out.size, 1))
    s0, s1, w0, w1 = drive.segments(t_start, t_end)
    try:
        return kernels.integrate_linear(
            drift, coupling, s0, s1, w0, w1,
            np.ascontiguousarray(x0, dtype=complex), t_out, rtol, atol,
        )
    except FloatingPointError as exc:
        raise ConvergenceError(str(exc)) from exc


def evolve(initial: DensityState, params: EmitterParams, drive: DriveProtocol,
           t_grid: Sequence[float], rtol=RTOL, atol=ATOL) -> Trajectory:
    """Integrate the master equation from ``initial`` at ``t_grid[0]``."""
    _check_params(params)
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise InputError("t_grid must be a non-empty 1-D sequence")
    if np.any(np.diff(t) <= 0):
        raise InputError("t_grid must be strictly increasing")
    x = propagate(initial.vector(), params, drive, t[0], t, rtol=rtol, atol=atol)
    return Trajectory(t, x[:, 0].real.copy(), x[:, 1].real.copy(), x[:, 2].copy())


def steady_state(params: EmitterParams, omega: float, detuning: float = 0.0) -> DensityState:
    gen = build_liouvillian(params, omega, detuning)
    a = gen.copy()
    a[0] = [1, 1, 0, 0]
    rhs = np.array([1, 0, 0, 0], dtype=complex)
    x = np.linalg.solve(a, rhs)
    x[3] = np.conj(x[2])
    return DensityState.from_vector(x)


def power_to_rabi(p_over_p0: float, params: EmitterParams) -> float:
    """Rabi frequency from drive power in units of the saturation power.

    Uses s = omega**2 * t1 * t2 = P / P0.
    """
    _check_params(params)
    if not p_over_p0 >= 0:
        raise InputError(f"power must be >= 0, got {p_over_p0}")
    return float(np.sqrt(p_over_p0 / (params.t1 * params.t2)))


def rabi_to_power(omega: float, params: EmitterParams) -> float:
    return float(omega**2 * params.t1 * params.t2)
