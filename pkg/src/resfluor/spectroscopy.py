"""Saturation spectroscopy, linewidths and time-resolved Rabi traces.

Powers are in nW, count rates in counts/s, frequencies in GHz and
linewidths (FWHM, cyclic) in MHz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlations import periodic_state
from .emitter import EmitterParams, PulseTrain, propagate
from .errors import ConvergenceError, InputError, ParameterError
from .fitting import FitProblem, FitReport, curve_fit, nls_fit

# the linewidth quoted for the second emitter and the coherence time printed next to it
QUOTED_PAIR = (50.0, 7.5)


@dataclass(frozen=True)
class SaturationParams:
    p0: float
    r_inf: float
    gamma0: float

    def __post_init__(self):
        for name in ("p0", "r_inf", "gamma0"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")


def _power(p):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise InputError("power must be >= 0")
    return p


def saturation_rate(p, sp: SaturationParams):
    """R(P) = r_inf * s / (1 + s) with s = P / p0."""
    s = _power(p) / sp.p0
    return sp.r_inf * s / (1 + s)


def power_linewidth(p, sp: SaturationParams):
    """Power-broadened FWHM gamma0 * sqrt(1 + P / p0) in MHz."""
    return sp.gamma0 * np.sqrt(1 + _power(p) / sp.p0)


def linewidth_to_t2(gamma_fwhm):
    """T2 (ns) = 1 / (pi * FWHM) with the FWHM in MHz."""
    g = np.asarray(gamma_fwhm, dtype=float)
    if np.any(g <= 0):
        raise InputError("linewidth must be > 0")
    out = 1e3 / (np.pi * g)
    return float(out) if out.ndim == 0 else out


def t2_to_linewidth(t2):
    """Inverse of :func:`linewidth_to_t2`: FWHM in MHz for T2 in ns."""
    t = np.asarray(t2, dtype=float)
    if np.any(t <= 0):
        raise InputError("t2 must be > 0")
    out = 1e3 / (np.pi * t)
    return float(out) if out.ndim == 0 else out


def linewidth_report(gamma_fwhm: float, t2_quoted: float | None = None, rtol: float = 0.05) -> dict:
    """T2 from a linewidth, compared against an independently quoted T2.

    ``consistent`` is False when the two differ by more than ``rtol``; both
    numbers are returned so neither convention is silently preferred.
    """
    t2 = linewidth_to_t2(gamma_fwhm)
    out = {"linewidth_mhz": float(gamma_fwhm), "t2_from_linewidth": t2}
    if t2_quoted is not None:
        rel = (t2_quoted - t2) / t2
        out.update(t2_quoted=float(t2_quoted), relative_difference=rel,
                   consistent=bool(abs(rel) <= rtol),
                   linewidth_for_quoted=t2_to_linewidth(t2_quoted))
    return out


def lorentzian(f, f0, fwhm, amp, offset=0.0):
    """Lorentzian line in counts/s; ``f``, ``f0`` in GHz, ``fwhm`` in MHz."""
    if not fwhm > 0:
        raise InputError("fwhm must be > 0")
    x = 2 * (np.asarray(f, dtype=float) - f0) / (fwhm * 1e-3)
    return amp / (1 + x**2) + offset


def fit_lorentzian(f, y, p0=None, sigma=None) -> FitReport:
    """Fit (f0, fwhm, amp, offset); a moment-based guess is used if ``p0`` is None."""
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    if f.size < 5:
        raise InputError("need at least 5 points")
    if p0 is None:
        off = float(np.min(y))
        amp = float(np.max(y)) - off
        f0 = float(f[np.argmax(y)])
        above = f[y - off > amp / 2]
        width = max((above.max() - above.min()) * 1e3, 2e3 * np.median(np.diff(np.sort(f))))
        p0 = [f0, width, max(amp, 1e-12), off]
    lo = [f.min(), 1e-9, 0.0, -np.inf]
    hi = [f.max(), np.inf, np.inf, np.inf]
    return curve_fit(lorentzian, f, y, p0, sigma, (lo, hi), names=["f0", "fwhm", "amp", "offset"])


@dataclass
class SaturationFit:
    params: SaturationParams
    stderr: dict
    reports: list
    joint: bool

    def as_dict(self):
        return {"p0": self.params.p0, "r_inf": self.params.r_inf, "gamma0": self.params.gamma0,
                "stderr": self.stderr, "joint": self.joint,
                "reports": [r.as_dict() for r in self.reports]}


def fit_saturation(power, rate, linewidth, rate_sigma=None, width_sigma=None,
                   joint: bool = True, p0_guess=None) -> SaturationFit:
    """Fit count rate and linewidth versus power.

    With ``joint`` one p0 is shared by both curves; otherwise each is fitted
    on its own and ``stderr`` carries ``p0_rate`` and ``p0_width`` as well.
    """
    p = _power(power)
    r = np.asarray(rate, dtype=float)
    w = np.asarray(linewidth, dtype=float)
    if not (p.shape == r.shape == w.shape) or p.size < 3:
        raise InputError("power, rate and linewidth need equal length >= 3")
    rs = np.full(p.size, 1.0) if rate_sigma is None else np.broadcast_to(rate_sigma, p.shape)
    ws = np.full(p.size, 1.0) if width_sigma is None else np.broadcast_to(width_sigma, p.shape)
    if rate_sigma is None:
        rs = rs * max(np.max(np.abs(r)), 1e-300)
    if width_sigma is None:
        ws = ws * max(np.max(np.abs(w)), 1e-300)
    if p0_guess is not None:
        g0 = float(p0_guess)
    else:
        g0 = float(np.median(p[p > 0])) if np.any(p > 0) else 1.0
    r0 = float(np.max(r)) * 1.5
    w0 = float(np.min(w))
    bounds_lo = [1e-12, 1e-12, 1e-12]

    def rate_model(x, p0_, rinf):
        return rinf * (x / p0_) / (1 + x / p0_)

    def width_model(x, p0_, g):
        return g * np.sqrt(1 + x / p0_)

    if joint:
        def resid(q):
            return np.concatenate([(rate_model(p, q[0], q[1]) - r) / rs,
                                   (width_model(p, q[0], q[2]) - w) / ws])

        rep = nls_fit(FitProblem(resid, [g0, r0, w0], (bounds_lo, [np.inf] * 3),
                                 names=["p0", "r_inf", "gamma0"]))
        if not rep.converged:
            raise ConvergenceError("saturation fit did not converge", rep)
        q = rep.params
        err = dict(zip(["p0", "r_inf", "gamma0"], rep.stderr.tolist()))
        return SaturationFit(SaturationParams(*q), err, [rep], True)

    ra = curve_fit(rate_model, p, r, [g0, r0], rs, ([1e-12] * 2, [np.inf] * 2), names=["p0", "r_inf"])
    wa = curve_fit(width_model, p, w, [g0, w0], ws, ([1e-12] * 2, [np.inf] * 2), names=["p0", "gamma0"])
    for rep in (ra, wa):
        if not rep.converged:
            raise ConvergenceError("saturation fit did not converge", rep)
    # report the rate-curve p0 as the saturation power
    sp = SaturationParams(ra.params[0], ra.params[1], wa.params[1])
    err = {"p0": ra.stderr[0], "r_inf": ra.stderr[1], "gamma0": wa.stderr[1],
           "p0_rate": ra.params[0], "p0_width": wa.params[0]}
    return SaturationFit(sp, err, [ra, wa], False)


def fit_ple_family(freq, spectra, power, joint: bool = True) -> tuple[SaturationFit, list]:
    """Lorentzian fit of each PLE spectrum, then a saturation fit of peak rate and FWHM.

    ``spectra`` has one row per entry of ``power``. Returns the saturation
    fit and the per-spectrum Lorentzian reports.
    """
    spectra = np.atleast_2d(np.asarray(spectra, dtype=float))
    power = _power(power)
    if spectra.shape[0] != power.size:
        raise InputError("one spectrum per power is required")
    reps = [fit_lorentzian(freq, row) for row in spectra]
    amp = np.array([r.params[2] for r in reps])
    fwhm = np.array([r.params[1] for r in reps])
    amp_err = np.array([r.stderr[2] for r in reps])
    fwhm_err = np.array([r.stderr[1] for r in reps])
    floor = lambda e, v: np.maximum(e, 1e-9 * np.max(np.abs(v)))
    fit = fit_saturation(power, amp, fwhm, floor(amp_err, amp), floor(fwhm_err, fwhm), joint=joint)
    return fit, reps


# ---------------------------------------------------------------- Rabi traces


def extinction_to_omega_off(omega_on: float, extinction_db: float) -> float:
    """Field amplitude leaking through a modulator with the given power extinction."""
    return omega_on * 10 ** (-extinction_db / 20)


def rabi_trace(params: EmitterParams, drive: PulseTrain, scale: float, offset: float, t_grid,
               settle_periods: int = 2):
    """scale * rho22(t) + offset for the periodically driven emitter.

    ``t_grid`` is measured from a pulse start; the state at t = 0 is the
    periodic regime reached after ``settle_periods`` cycles.
    """
    if not isinstance(drive, PulseTrain):
        raise InputError("rabi_trace needs a PulseTrain drive")
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise InputError("t_grid must be strictly increasing")
    x0 = periodic_state(params, drive, 0.0, settle_periods)
    x = propagate(x0, params, drive, 0.0, t)
    return scale * x[:, 1].real + offset


@dataclass
class RabiFit:
    omega_on: float
    omega_off: float
    t2: float
    scale: float
    offset: float
    stderr: dict
    report: FitReport

    @property
    def values(self):
        return {"omega_on": self.omega_on, "omega_off": self.omega_off, "t2": self.t2,
                "scale": self.scale, "offset": self.offset}

    def as_dict(self):
        return {**self.values, "stderr": self.stderr, "report": self.report.as_dict()}


RABI_NAMES = ("omega_on", "omega_off", "t2", "scale", "offset")


def fit_rabi(t, data, t1: float, pulse_width: float, period: float, p0: dict,
             edge_time: float = 0.3, sigma=None, max_iter: int = 200) -> RabiFit:
    """Fit omega_on, omega_off, t2, scale and offset with t1 held fixed.

    ``p0`` maps those names to starting values. ``t`` must span at least one
    drive period.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(data, dtype=float)
    if t.shape != y.shape:
        raise InputError("t and data must have the same shape")
    step = float(np.max(np.diff(t))) if t.size > 1 else 0.0
    if t[-1] - t[0] + step < period * (1 - 1e-9):
        raise InputError("data must cover at least one full ON/OFF cycle")
    missing = [k for k in RABI_NAMES if k not in p0]
    if missing:
        raise InputError(f"missing starting values: {missing}")
    start = [float(p0[k]) for k in RABI_NAMES]
    lo = [0.0, 0.0, 1e-3, 0.0, -np.inf]
    hi = [np.inf, np.inf, 2 * t1, np.inf, np.inf]
    start[2] = min(start[2], 2 * t1)

    def resid(q):
        drive = PulseTrain(q[0], q[1], pulse_width, period, edge_time)
        return rabi_trace(EmitterParams(t1, q[2]), drive, q[3], q[4], t) - y

    weights = None if sigma is None else 1.0 / np.broadcast_to(np.asarray(sigma, float), y.shape)
    rep = nls_fit(FitProblem(resid, start, (lo, hi), weights, list(RABI_NAMES)), max_iter=max_iter)
    if not rep.converged:
        raise ConvergenceError(f"Rabi fit did not converge ({rep.message})", rep)
    return RabiFit(*map(float, rep.params), dict(zip(RABI_NAMES, rep.stderr.tolist())), rep)


def sqrt_power_line(power, omega_on, sigma=None) -> FitReport:
    """Straight-line fit omega_on = a * sqrt(P) + b."""
    x = np.sqrt(_power(power))
    y = np.asarray(omega_on, dtype=float)
    slope = float(np.polyfit(x, y, 1)[0]) if x.size > 1 else 1.0
    return curve_fit(lambda u, a, b: a * u + b, x, y, [slope, 0.0], sigma, names=["slope", "intercept"])


def fit_lifetime(t, counts, fall_time: float, edge_time: float = 0.3, sigma=None) -> FitReport:
    """Exponential tail a exp(-(t - t_s) / t1) + c after a falling edge.

    Samples earlier than ``fall_time + 2 * edge_time`` are excluded.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(counts, dtype=float)
    ts = fall_time + 2 * edge_time
    m = t >= ts
    if m.sum() < 4:
        raise InputError("not enough samples after the falling edge")
    tt, yy = t[m], y[m]
    sg = None if sigma is None else np.broadcast_to(np.asarray(sigma, float), y.shape)[m]
    c0 = float(np.min(yy))
    a0 = max(float(yy[0]) - c0, 1e-12)
    half = tt[np.argmax(yy - c0 < a0 / np.e)] - ts if np.any(yy - c0 < a0 / np.e) else tt[-1] - ts
    model = lambda x, a, tau, c: a * np.exp(-(x - ts) / tau) + c
    rep = curve_fit(model, tt, yy, [a0, max(half, 1e-3), c0], sg,
                    ([0.0, 1e-6, -np.inf], [np.inf, np.inf, np.inf]), names=["amp", "t1", "offset"])
    if not rep.converged:
        raise ConvergenceError("lifetime fit did not converge", rep)
    return rep
