"""Two-photon interference in an unbalanced Mach-Zehnder (delay ``delta_t``).

CW: orthogonal/parallel correlations built from the emitter g2 and g1 with
uncorrelated laser background. Pulsed: five-peak correlation assembled
from emission-window integrals of the regression correlators.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .correlations import (
    TPI_PAR,
    TPI_PERP,
    VISIBILITY,
    CorrelationTrace,
    _rows,
    g1_regression,
    g2_regression,
    periodic_state,
)
from .emitter import EmitterParams, PulseTrain, propagate
from .errors import ConvergenceError, InputError, ParameterError
from .fitting import FitProblem, nls_fit


@dataclass(frozen=True)
class InterferometerConfig:
    """Splitter intensity coefficients, fibre delay (ns), background ratio
    and the two phenomenological overlap factors (CW ``v0``, pulsed ``script_v``)."""

    r1: float = 0.5
    t1r: float = 0.5
    r2: float = 0.5
    t2r: float = 0.5
    delta_t: float = 25.0
    eta: float = 0.25
    v0: float = 1.0
    script_v: float = 1.0

    def __post_init__(self):
        for name in ("r1", "t1r", "r2", "t2r"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise InputError(f"{name} must lie in [0, 1]")
        if abs(self.r1 + self.t1r - 1) > 1e-9 or abs(self.r2 + self.t2r - 1) > 1e-9:
            raise InputError("splitter coefficients must sum to 1")
        if not self.eta >= 0:
            raise InputError("eta must be >= 0")
        if not self.delta_t > 0:
            raise InputError("delta_t must be > 0")
        if not (0 <= self.v0 <= 1 and 0 <= self.script_v <= 1):
            raise InputError("overlap factors must lie in [0, 1]")

    @property
    def norm(self) -> float:
        r1, t1, r2, t2 = self.r1, self.t1r, self.r2, self.t2r
        return r2 * t2 * (t1**2 + r1**2) + r1 * t1 * (t2**2 + r2**2)


@dataclass
class CuspModel:
    centers: np.ndarray
    tau0: float
    areas: np.ndarray
    tau0_err: float = float("nan")
    area_errs: np.ndarray = field(default_factory=lambda: np.full(5, np.nan))
    report: object = None

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        out = np.zeros_like(tau)
        for c, a in zip(self.centers, self.areas):
            out += a / (2 * self.tau0) * np.exp(-np.abs(tau - c) / self.tau0)
        return out


class CoalescenceWindow(NamedTuple):
    ctw: float
    window: float
    boundary_value: float
    converged: bool


def _check_cfg(cfg):
    if not isinstance(cfg, InterferometerConfig):
        raise InputError("cfg must be an InterferometerConfig")


def cw_tpi(params: EmitterParams, omega: float, cfg: InterferometerConfig, tau_grid,
           params_perp: EmitterParams | None = None):
    """Parallel and orthogonal CW correlations.

    ``params_perp`` lets the orthogonal trace use its own coherence time.
    Returns ``(g2_par, g2_perp)``.
    """
    _check_cfg(cfg)
    if not omega > 0:
        raise ParameterError("omega must be > 0")
    tau = np.asarray(tau_grid, dtype=float)
    dt = cfg.delta_t
    r1, t1, r2, t2 = cfg.r1, cfg.t1r, cfg.r2, cfg.t2r
    a = cfg.norm
    bg = (1 + cfg.eta) ** 2

    # every lag the formula needs, evaluated exactly (g2 is even in tau)
    nodes = np.unique(np.abs(np.concatenate([tau, tau + dt, tau - dt])))

    def perp_for(p):
        g2 = g2_regression(p, omega, nodes).values
        g = lambda x: np.interp(np.abs(x), nodes, g2)
        num = t2 * r2 * (t1**2 + r1**2) * g(tau) + r1 * t1 * (t2**2 * g(tau + dt) + r2**2 * g(tau - dt))
        return 1 - 1 / bg + num / (a * bg), num

    perp_vals, _ = perp_for(params_perp or params)
    par_base, num = perp_for(params)
    g1 = g1_regression(params, omega, tau)
    interf = r1 * t1 * (r2**2 + t2**2) * cfg.v0 * np.abs(g1.values) ** 2
    par_vals = 1 - 1 / bg + (num - interf) / (a * bg)
    meta = {"omega": omega, "delta_t": dt, "eta": cfg.eta, "v0": cfg.v0,
            "t1": params.t1, "t2_par": params.t2, "t2_perp": (params_perp or params).t2}
    return (CorrelationTrace(tau, par_vals, TPI_PAR, dict(meta)),
            CorrelationTrace(tau, perp_vals, TPI_PERP, dict(meta)))


def hom_visibility(g2_par: CorrelationTrace, g2_perp: CorrelationTrace) -> CorrelationTrace:
    """Pointwise (g_perp - g_par) / g_perp; points with g_perp < 1e-6 are set to 0 and flagged."""
    if g2_par.tau.shape != g2_perp.tau.shape or not np.allclose(g2_par.tau, g2_perp.tau, atol=1e-12):
        raise InputError("traces must share the same tau grid")
    perp = g2_perp.values.real
    par = g2_par.values.real
    bad = perp < 1e-6
    v = np.zeros_like(perp)
    v[~bad] = (perp[~bad] - par[~bad]) / perp[~bad]
    return CorrelationTrace(g2_perp.tau.copy(), v, VISIBILITY, {"flagged": np.flatnonzero(bad).tolist()})


def _integrate(trace, lo, hi):
    tau = trace.tau
    vals = trace.values.real
    inner = (tau > lo) & (tau < hi)
    x = np.concatenate([[lo], tau[inner], [hi]])
    y = np.concatenate([[np.interp(lo, tau, vals)], vals[inner], [np.interp(hi, tau, vals)]])
    return float(np.trapezoid(y, x))


def ctw(visibility: CorrelationTrace, window: float = 50.0, tol: float = 1e-3) -> CoalescenceWindow:
    """Coalescence time window: trapezoidal integral of V(tau) over [-window, window].

    ``converged`` is False (and a warning is issued) when |V| at either
    boundary exceeds ``tol``.
    """
    if not window > 0:
        raise InputError("window must be > 0")
    slack = 1e-9 * max(window, 1.0)
    if visibility.tau[0] > -window + slack or visibility.tau[-1] < window - slack:
        raise InputError("visibility trace does not cover [-window, window]")
    value = _integrate(visibility, -window, window)
    edge = float(max(abs(np.interp(-window, visibility.tau, visibility.values.real)),
                     abs(np.interp(window, visibility.tau, visibility.values.real))))
    ok = edge < tol
    if not ok:
        warnings.warn(f"visibility at the integration boundary is {edge:.3g} (> {tol}); "
                      "CTW depends on the window", RuntimeWarning, stacklevel=2)
    return CoalescenceWindow(value, window, edge, ok)


def calibrate_v0(params, omega, cfg, target_ctw, window=50.0, tau_step=0.05):
    """Overlap factor v0 in [0, 1] giving CTW = ``target_ctw``.

    CTW is linear in v0, so one evaluation at v0 = 1 fixes it. Returns
    ``(v0, ctw_at_v0)``; raises ParameterError when the target exceeds
    what v0 = 1 reaches.
    """
    from dataclasses import replace

    tau = np.arange(-window, window + tau_step / 2, tau_step)
    full = replace(cfg, v0=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        c1 = ctw(hom_visibility(*cw_tpi(params, omega, full, tau)), window).ctw
    v0 = target_ctw / c1
    if not 0 <= v0 <= 1:
        raise ParameterError(f"CTW {target_ctw} not reachable (v0 = 1 gives {c1:.3f})")
    return v0, c1 * v0


# ---------------------------------------------------------------- pulsed

GATE_T1 = 3.0  # default post-pulse gate, in units of t1


def _window_grid(start, length, dt):
    m = max(int(round(length / dt)), 1)
    step = length / m
    t = start + step * np.arange(m + 1)
    w = np.full(m + 1, step)
    w[0] = w[-1] = step / 2
    return t, w, step


def pulsed_components(params: EmitterParams, drive: PulseTrain, cfg: InterferometerConfig,
                      gate_len: float | str | None = "auto", n_periods: int = 4, dt: float = 0.05,
                      settle_periods: int = 2):
    """Central-peak building blocks on a uniform lag grid.

    Returns a dict with ``lag``, ``g_perp`` (orthogonal central peak),
    ``interference`` (t-integrated |G1|^2), ``hbt`` (same-arm consecutive
    emissions, lag measured from ``delta_t``) and ``step``.
    ``gate_len=None`` keeps photons from the full period; otherwise only
    photons in [pulse_end, pulse_end + gate_len) of each period count.
    ``"auto"`` gates 3 t1 after the falling edge (capped at the next pulse).
    """
    period = drive.period
    if isinstance(gate_len, str):
        if gate_len != "auto":
            raise InputError(f"unknown gate_len {gate_len!r}")
        gate_len = min(GATE_T1 * params.t1, period - drive.pulse_end)
    if gate_len is None:
        w_start, w_len = 0.0, period
    else:
        if not gate_len > 0:
            raise InputError("gate_len must be > 0")
        w_start, w_len = drive.pulse_end, gate_len
        if w_start + w_len > period + 1e-9:
            raise InputError("gate extends past the next pulse")
    t_loc, weights, step = _window_grid(0.0, w_len, dt)
    m = t_loc.size
    rt = cfg.r2 * cfg.t2r
    rr = cfg.r2**2 + cfg.t2r**2

    windows = [k * period + w_start + t_loc for k in range(n_periods + 1)]
    all_t = np.concatenate(windows)
    t0 = windows[0][0]
    x_start = periodic_state(params, drive, t0, settle_periods)
    states = propagate(x_start, params, drive, t0, all_t).reshape(n_periods + 1, m, 4)

    nl = 2 * m - 1
    g_perp = np.zeros(nl)
    interf = np.zeros(nl)
    hbt = np.zeros(nl)
    centre = m - 1
    for k in range(n_periods):
        p = states[k, :, 1].real
        # orthogonal peak: autocorrelation of the windowed emission profile
        for i in range(m):
            g_perp[centre: centre + m - i] += rr * weights[i] * p[i] * p[i:]
        for i in range(m):
            tail = windows[k][i:]
            g1, _ = _rows(params, drive, windows[k][i], states[k, i], tail - windows[k][i], rt,
                          want_g2=False)
            interf[centre: centre + m - i] += weights[i] * np.abs(g1) ** 2
            if p[i] > 0:
                cond = propagate(np.array([1, 0, 0, 0], dtype=complex), params, drive,
                                 windows[k][i], windows[k + 1])[:, 1].real
                # second photon at window k+1 index j -> lag (j - i) * step beyond delta_t
                hbt[centre - i: centre - i + m] += rt * weights[i] * p[i] * cond
    g_perp[:centre] = g_perp[centre + 1:][::-1]
    interf[:centre] = interf[centre + 1:][::-1]
    lag = step * (np.arange(nl) - centre)
    return {"lag": lag, "g_perp": g_perp, "interference": interf, "hbt": hbt, "step": step,
            "n_periods": n_periods, "gate_len": gate_len, "window_start": w_start}


def pulsed_tpi(params: EmitterParams, drive: PulseTrain, cfg: InterferometerConfig, tau_grid=None,
               gate_len: float | str | None = "auto", n_periods: int = 4, dt: float = 0.05,
               components: dict | None = None):
    """Five-peak pulsed TPI correlations ``(g2_par, g2_perp)``.

    Peaks sit at 0, +-delta_t, +-2 delta_t; the outermost peak area is
    normalised to 1. ``gate_len`` applies post-pulse time filtering.
    """
    _check_cfg(cfg)
    if not isinstance(drive, PulseTrain):
        raise InputError("pulsed_tpi needs a PulseTrain drive")
    d = cfg.delta_t
    if abs(drive.period - d) > 1e-9 * d:
        raise InputError(f"drive period {drive.period} must match delta_t {d}")
    if d < 5 * params.t1:
        warnings.warn("delta_t < 5 t1: self-interference between consecutive photons "
                      "is not negligible", RuntimeWarning, stacklevel=2)
    if tau_grid is None:
        half = int(np.ceil(2.5 * d / dt - 1e-9))
        tau_grid = dt * np.arange(-half, half + 1)  # exactly symmetric: gated peaks have step edges
    tau = np.asarray(tau_grid, dtype=float)
    c = components or pulsed_components(params, drive, cfg, gate_len, n_periods, dt)
    lag = c["lag"]
    f_perp = lambda x: np.interp(x, lag, c["g_perp"], left=0.0, right=0.0)
    f_int = lambda x: np.interp(x, lag, c["interference"], left=0.0, right=0.0)
    f_hbt = lambda x: np.interp(x, lag, c["hbt"], left=0.0, right=0.0)
    norm = 1.0 / np.trapezoid(c["g_perp"], lag)
    shared = 4 * f_hbt(tau - d) + 4 * f_hbt(-(tau + d)) + f_perp(tau + 2 * d) + f_perp(tau - 2 * d)
    central_perp = f_perp(tau)
    central_par = central_perp - cfg.script_v * f_int(tau)
    perp = norm * (shared + 2 * central_perp)
    par = norm * (shared + 2 * central_par)
    direct = cfg.script_v * np.trapezoid(c["interference"], lag) / np.trapezoid(c["g_perp"], lag)
    meta = {"delta_t": d, "script_v": cfg.script_v, "t1": params.t1, "t2": params.t2,
            "normalisation": norm, "visibility_components": direct,
            "gate_len": c["gate_len"], "n_periods": c["n_periods"],
            "support": c["lag"][-1]}
    return (CorrelationTrace(tau, par, TPI_PAR, dict(meta)),
            CorrelationTrace(tau, perp, TPI_PERP, dict(meta)))


def default_halfwidth(delta_t: float, gate_len: float | None = None) -> float:
    """Largest central-peak half width free of the neighbouring peaks.

    A gate of length L confines each peak to |tau - k delta_t| < L, so the
    central peak can be integrated out to delta_t - L before the side peaks
    start; without a gate (or a long one) the period midpoint is used.
    """
    half = 0.499 * delta_t
    if gate_len is None:
        return half
    return float(min(max(delta_t - gate_len, 0.0), half)) or half


def pulsed_visibility(g2_par: CorrelationTrace, g2_perp: CorrelationTrace,
                      peak_halfwidth: float | None = None) -> float:
    """Central-peak visibility (int perp - int par) / int perp over [-hw, hw].

    ``peak_halfwidth=None`` uses :func:`default_halfwidth` from the traces' metadata.
    """
    if g2_par.tau.shape != g2_perp.tau.shape or not np.allclose(g2_par.tau, g2_perp.tau, atol=1e-12):
        raise InputError("traces must share the same tau grid")
    d = g2_perp.meta.get("delta_t")
    if peak_halfwidth is None:
        if d is None:
            raise InputError("peak_halfwidth is required when the traces carry no delta_t")
        peak_halfwidth = default_halfwidth(d, g2_perp.meta.get("gate_len"))
    if d is not None and not peak_halfwidth < d / 2:
        raise InputError("peak_halfwidth must be < delta_t / 2")
    ip = _integrate(g2_perp, -peak_halfwidth, peak_halfwidth)
    ia = _integrate(g2_par, -peak_halfwidth, peak_halfwidth)
    if ip == 0:
        raise ParameterError("orthogonal central-peak integral is zero")
    return (ip - ia) / ip


def peak_areas(trace: CorrelationTrace, delta_t: float) -> np.ndarray:
    """Integrals over [k delta_t - delta_t/2, k delta_t + delta_t/2] for k = -2..2."""
    return np.array([_integrate(trace, (k - 0.5) * delta_t, (k + 0.5) * delta_t)
                     for k in range(-2, 3)])


def _hist_weights(y, weighting):
    """Least-squares weights for a (possibly normalised) coincidence histogram.

    ``"poisson"`` uses 1/sqrt(y) with a floor at 1e-3 of the maximum so that
    empty bins do not dominate; ``"uniform"`` weights every bin equally.
    """
    if weighting == "uniform":
        return None
    if weighting != "poisson":
        raise InputError(f"unknown weighting {weighting!r}")
    floor = 1e-3 * max(float(np.max(np.abs(y))), 1e-300)
    return 1.0 / np.sqrt(np.maximum(y, floor))


def fit_cusps(histogram: CorrelationTrace, delta_t: float, constrain_ratio: bool = False,
              tau0_guess: float | None = None, tau0: float | None = None,
              weighting: str = "poisson") -> CuspModel:
    """Fit five cusps (A / 2 tau0) exp(-|tau - k delta_t| / tau0), k = -2..2.

    ``areas`` are peak areas. With ``constrain_ratio`` the non-central areas
    are locked to a:2a:.:2a:a and only ``a`` and the central area are free.
    ``tau0`` fixes the shared decay time (used to share it across datasets).
    """
    tau = histogram.tau
    y = histogram.values.real
    if tau[0] > -2.5 * delta_t + 1e-9 or tau[-1] < 2.5 * delta_t - 1e-9:
        raise InputError("histogram must cover [-2.5 delta_t, 2.5 delta_t]")
    centers = delta_t * np.arange(-2, 3)
    rough = peak_areas(histogram, delta_t)
    t0 = tau0_guess or max(delta_t / 5, 1e-3)
    fixed = tau0 is not None

    def unpack(p):
        k = 0
        if fixed:
            width = tau0
        else:
            width = p[0]
            k = 1
        if constrain_ratio:
            a, x = p[k], p[k + 1]
            areas = np.array([a, 2 * a, x, 2 * a, a])
        else:
            areas = np.asarray(p[k:k + 5])
        return width, areas

    def model(p):
        width, areas = unpack(p)
        out = np.zeros_like(tau)
        for ci, ai in zip(centers, areas):
            out += ai / (2 * width) * np.exp(-np.abs(tau - ci) / width)
        return out

    if constrain_ratio:
        a0 = max((rough[0] + rough[4] + (rough[1] + rough[3]) / 2) / 4, 1e-12)
        p0 = [a0, max(rough[2], 0.0)]
        lo, hi = [0.0, 0.0], [np.inf, np.inf]
    else:
        p0 = list(np.maximum(rough, 0.0))
        lo, hi = [0.0] * 5, [np.inf] * 5
    if not fixed:
        p0 = [t0] + p0
        lo = [1e-6] + lo
        hi = [np.inf] + hi
    rep = nls_fit(FitProblem(lambda p: model(p) - y, p0, (lo, hi), _hist_weights(y, weighting)))
    if not rep.converged:
        raise ConvergenceError(f"cusp fit did not converge (chi2={rep.chi2:.3g})", rep)
    width, areas = unpack(rep.params)
    err = rep.stderr
    k = 0 if fixed else 1
    w_err = float("nan") if fixed else float(err[0])
    if constrain_ratio:
        ea, ex = err[k], err[k + 1]
        area_errs = np.array([ea, 2 * ea, ex, 2 * ea, ea])
    else:
        area_errs = np.asarray(err[k:k + 5])
    return CuspModel(centers, float(width), np.asarray(areas, dtype=float), w_err, area_errs, rep)


def fit_cusp_pair(g2_perp: CorrelationTrace, g2_par: CorrelationTrace, delta_t: float,
                  constrain_ratio: bool = True, tau0_guess: float | None = None,
                  weighting: str = "poisson"):
    """Joint fit of orthogonal and parallel histograms with one shared tau0 over ten peaks.

    Returns ``(perp_model, par_model, v_hom, v_hom_err)`` with
    v_hom = (A_perp - A_par) / A_perp from the central areas.
    """
    for h in (g2_perp, g2_par):
        if h.tau[0] > -2.5 * delta_t + 1e-9 or h.tau[-1] < 2.5 * delta_t - 1e-9:
            raise InputError("histograms must cover [-2.5 delta_t, 2.5 delta_t]")
    centers = delta_t * np.arange(-2, 3)
    ra = peak_areas(g2_perp, delta_t)
    rb = peak_areas(g2_par, delta_t)

    def cusps(x, width, areas):
        out = np.zeros_like(x)
        for ci, ai in zip(centers, areas):
            out += ai / (2 * width) * np.exp(-np.abs(x - ci) / width)
        return out

    def split(p):
        width = p[0]
        if constrain_ratio:
            a1, x1, a2, x2 = p[1:5]
            return width, np.array([a1, 2 * a1, x1, 2 * a1, a1]), np.array([a2, 2 * a2, x2, 2 * a2, a2])
        return width, np.asarray(p[1:6]), np.asarray(p[6:11])

    def resid(p):
        width, aa, ab = split(p)
        return np.concatenate([cusps(g2_perp.tau, width, aa) - g2_perp.values.real,
                               cusps(g2_par.tau, width, ab) - g2_par.values.real])

    w0 = tau0_guess or delta_t / 5
    if constrain_ratio:
        p0 = [w0, ra[0], ra[2], rb[0], max(rb[2], 1e-9)]
    else:
        p0 = [w0, *np.maximum(ra, 1e-9), *np.maximum(rb, 1e-9)]
    lo = [1e-6] + [0.0] * (len(p0) - 1)
    weights = _hist_weights(np.concatenate([g2_perp.values.real, g2_par.values.real]), weighting)
    rep = nls_fit(FitProblem(resid, p0, (lo, [np.inf] * len(p0)), weights))
    if not rep.converged:
        raise ConvergenceError("joint cusp fit did not converge", rep)
    width, aa, ab = split(rep.params)
    e = rep.stderr
    ic_perp, ic_par = (2, 4) if constrain_ratio else (3, 8)
    ap, ar = rep.params[ic_perp], rep.params[ic_par]
    v = (ap - ar) / ap
    cov = rep.covariance
    grad = np.zeros(len(p0))
    grad[ic_perp] = ar / ap**2
    grad[ic_par] = -1 / ap
    v_err = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    mk = lambda areas: CuspModel(centers, float(width), areas, float(e[0]), np.full(5, np.nan), rep)
    return mk(aa), mk(ab), float(v), v_err
