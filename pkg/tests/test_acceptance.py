"""Acceptance criteria, one test each.

Every test records a single pass/fail line (printed in the terminal
summary) and then asserts the same condition.
"""

import time
import warnings

import numpy as np
import pytest
from conftest import ACCEPTANCE

from resfluor import interference, readout, spectroscopy
from resfluor.correlations import g2_analytic, g2_regression
from resfluor.emitter import EmitterParams, PulseTrain
from resfluor.errors import ConvergenceError
from resfluor.synthetic import cw_stream, laser_mean_for_g2, pulsed_stream
from resfluor.tagstream import correlate, gate, pulsed_g2_zero


def record(key, checks, elapsed, limit):
    """``checks`` maps a label to (ok, text); the runtime limit is one more check."""
    checks = dict(checks)
    checks["runtime"] = (elapsed < limit, f"{elapsed:.1f}s < {limit:g}s")
    ok = all(c[0] for c in checks.values())
    detail = "; ".join(f"{k}={'ok' if c[0] else 'FAIL'} ({c[1]})" for k, c in checks.items())
    ACCEPTANCE[key] = (ok, detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
    failed = [k for k, c in checks.items() if not c[0]]
    assert ok, f"criterion {key} failed: {failed}"


def pi_pulse_train(period):
    return PulseTrain(np.pi / 5.0, 0.0, 5.0, period, 0.3)


def test_criterion_1_regression_matches_closed_form():
    p = EmitterParams(5.5, 7.1)
    tau = np.linspace(0, 50, 5001)
    t0 = time.perf_counter()
    num = g2_regression(p, 0.57, tau).values
    elapsed = time.perf_counter() - t0
    diff = float(np.max(np.abs(num - g2_analytic(p, 0.57, 1.0, tau))))
    g0 = float(g2_analytic(p, 0.57, 0.972, 0.0))
    record(1, {"pointwise": (diff < 1e-6, f"max |diff| {diff:.1e}"),
               "g2(0) beta=0.972": (abs(g0 - 0.028) < 1e-12, f"{g0:.6f}")}, elapsed, 1.0)


def test_criterion_2_saturation_round_trip():
    sp = spectroscopy.SaturationParams(6.1, 1e5, 34.0)
    f = np.linspace(-0.4, 0.4, 161)
    power = np.geomspace(0.5, 60, 8)
    clean = np.array([spectroscopy.lorentzian(f, 0.0, w, r)
                      for w, r in zip(spectroscopy.power_linewidth(power, sp),
                                      spectroscopy.saturation_rate(power, sp))])
    t0 = time.perf_counter()
    hits = 0
    for seed in range(100):
        noisy = clean * (1 + 0.01 * np.random.default_rng(seed).standard_normal(clean.shape))
        try:
            fit, _ = spectroscopy.fit_ple_family(f, noisy, power)
        except ConvergenceError:
            continue
        hits += (abs(fit.params.p0 / 6.1 - 1) < 0.03 and abs(fit.params.gamma0 / 34.0 - 1) < 0.03)
    elapsed = time.perf_counter() - t0
    t2 = spectroscopy.linewidth_to_t2(34.0)
    record(2, {"trials": (hits >= 95, f"{hits}/100 within 3%"),
               "T2(34 MHz)": (9.1 <= t2 <= 9.9, f"{t2:.2f} ns")}, elapsed, 10.0)


def test_criterion_3_coalescence_time_window():
    t0 = time.perf_counter()
    t1 = 5.5
    ideal = EmitterParams(t1, 2 * t1)
    cfg = interference.InterferometerConfig(0.5, 0.5, 0.5, 0.5, 25.0, 0.0, 1.0)
    tau = np.arange(-50, 50.0001, 0.05)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        par, perp = interference.cw_tpi(ideal, 0.02 / t1, cfg, tau)
        c_ideal = interference.ctw(interference.hom_visibility(par, perp), 50.0).ctw / t1
        dot = EmitterParams(5.5, 8.4)
        pcfg = interference.InterferometerConfig(0.5, 0.5, 0.5, 0.5, 25.0, 0.25, 1.0)
        v0, c_cal = interference.calibrate_v0(dot, 0.13, pcfg, 5.8)
    elapsed = time.perf_counter() - t0
    record(3, {"ideal CTW": (1.9 <= c_ideal <= 2.1, f"{c_ideal:.2f} T1, target [1.9, 2.1] T1"),
               "calibrated": (abs(c_cal - 5.8) <= 0.3, f"CTW {c_cal:.3f} ns at V0={v0:.4f}")},
           elapsed, 30.0)


def test_criterion_4_pulsed_peak_structure():
    t0 = time.perf_counter()
    cfg = interference.InterferometerConfig(0.5, 0.5, 0.5, 0.5, 25.0, 0.0, 1.0, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, perp = interference.pulsed_tpi(EmitterParams(5.5, 9.68), pi_pulse_train(25.0), cfg)
    areas = interference.peak_areas(perp, 25.0)
    elapsed = time.perf_counter() - t0
    ratio = areas / areas[0]
    target = np.array([1, 2, 2, 2, 1.0])
    dev = float(np.max(np.abs(ratio / target - 1)))
    record(4, {"ratio": (dev <= 0.03, " : ".join(f"{r:.3f}" for r in ratio) + f", max dev {dev:.3%}")},
           elapsed, 60.0)


def test_criterion_5_pulsed_visibility():
    t0 = time.perf_counter()
    cfg = interference.InterferometerConfig(0.5, 0.5, 0.5, 0.5, 25.0, 0.0, 1.0, 0.649)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        par, perp = interference.pulsed_tpi(EmitterParams(5.5, 9.68), pi_pulse_train(25.0), cfg)
    v = interference.pulsed_visibility(par, perp)
    _, _, v_fit, v_err = interference.fit_cusp_pair(perp, par, 25.0)
    elapsed = time.perf_counter() - t0
    record(5, {"V_HOM": (0.55 <= v <= 0.66, f"{v:.4f} in [0.55, 0.66]"),
               "cusp fit": (abs(v_fit - v) <= 0.03, f"{v_fit:.4f} +- {v_err:.4f}, |diff| {abs(v_fit - v):.4f}")},
           elapsed, 120.0)


def test_criterion_6_readout_statistics():
    t0 = time.perf_counter()
    agree = []
    for name in sorted(readout.PRESETS):
        model, window = readout.PRESETS[name]
        hb, hd = readout.simulate_shots(model, model, window, 1_000_000, seed=12345)
        ok = all(readout.bin_agreement(sim, readout.exact_count_dist(prep, window), 1_000_000)[1]
                 for sim, prep in ((hb, model.as_bright()), (hd, model.as_dark())))
        agree.append((name, ok))
    model, _ = readout.calibrate(t_flip=readout.CALIBRATED.t_flip)
    s = readout.readout_summary(model, 80.0)
    windows = np.arange(10.0, 201.0, 10.0)
    best = readout.sweep_window(model, windows).best_window
    elapsed = time.perf_counter() - t0
    record(6, {
        "MC vs exact": (all(ok for _, ok in agree), ", ".join(f"{n} {'ok' if ok else 'off'}" for n, ok in agree)),
        "threshold": (s["n_th"] == 1.5, f"n_th {s['n_th']}"),
        "f_avg": (abs(s["f_avg"] - 0.742) <= 0.01, f"{s['f_avg']:.4f}"),
        "F_down/F_up": (abs(s["f_down"] - 0.845) <= 0.02 and abs(s["f_up"] - 0.639) <= 0.02,
                        f"{s['f_down']:.3f}/{s['f_up']:.3f} vs 0.845/0.639"),
        "sweep optimum": (abs(best - 80.0) <= 10.0, f"{best:g} us"),
    }, elapsed, 60.0)


def test_criterion_7_rabi_round_trip():
    t0 = time.perf_counter()
    on = 0.8
    truth = {"omega_on": on, "omega_off": spectroscopy.extinction_to_omega_off(on, 23.0),
             "t2": 4.0, "scale": 1000.0, "offset": 20.0}
    t = np.linspace(0, 25, 251)

    def trace(q):
        drive = PulseTrain(q["omega_on"], q["omega_off"], 5.0, 25.0, 0.3)
        return spectroscopy.rabi_trace(EmitterParams(5.5, q["t2"]), drive, q["scale"], q["offset"], t)

    clean = trace(truth)
    start = {k: v * 1.1 for k, v in truth.items()}
    fit = spectroscopy.fit_rabi(t, clean, 5.5, 5.0, 25.0, start)
    worst = max(abs(getattr(fit, k) / v - 1) for k, v in truth.items())

    sigma = 0.02 * clean.max()
    covered = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        y = clean + rng.normal(0, sigma, t.size)
        p0 = {k: v * (1 + 0.05 * rng.standard_normal()) for k, v in truth.items()}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                f = spectroscopy.fit_rabi(t, y, 5.5, 5.0, 25.0, p0, sigma=sigma)
        except ConvergenceError:
            continue
        covered += all(abs(getattr(f, k) - v) <= 3 * f.stderr[k] for k, v in truth.items())

    power = np.array([1.0, 4.0, 9.0, 16.0, 25.0])
    k = 0.16
    fitted = []
    for pw in power:
        q = dict(truth, omega_on=k * np.sqrt(pw),
                 omega_off=spectroscopy.extinction_to_omega_off(k * np.sqrt(pw), 23.0))
        fitted.append(spectroscopy.fit_rabi(t, trace(q), 5.5, 5.0, 25.0,
                                            {a: b * 1.05 for a, b in q.items()}).omega_on)
    line = spectroscopy.sqrt_power_line(power, np.array(fitted))
    rel_b = abs(line.params[1]) / max(fitted)
    elapsed = time.perf_counter() - t0
    record(7, {"noise-free": (worst <= 0.02, f"max rel err {worst:.1e}"),
               "coverage": (covered >= 95, f"{covered}/100 within 3 sigma"),
               "sqrt(P) line": (rel_b < 0.02, f"|b|/max = {rel_b:.1e}")}, elapsed, 60.0)


def test_criterion_8_tagstream_pipeline():
    t0 = time.perf_counter()
    params = EmitterParams(5.5, 7.1)
    stream = cw_stream(params, 0.57, 190_000, efficiency=0.5, seed=8)
    h = correlate(stream, 0, 1, 0.5, 50.0)
    c = h.centers
    fine = np.arange(-51.0, 51.0 + 1e-9, 0.01)
    ref = g2_regression(params, 0.57, fine).values.real
    expect = np.array([ref[(fine >= a) & (fine < b)].mean()
                       for a, b in zip(h.bin_edges[:-1], h.bin_edges[1:])]) * h.norm
    chi2 = float(np.sum((h.counts - expect) ** 2 / expect) / h.counts.size)
    g0 = float(h.normalized[np.argmin(np.abs(c))])
    pairs = int(h.counts.sum())

    period, pulse_end, t1 = 25.0, 5.3, 5.5
    m = laser_mean_for_g2(0.3, period, pulse_end, t1)
    ps = pulsed_stream(200_000, period, pulse_end, t1, laser_mean=m, efficiency=0.3, seed=8)
    raw, raw_err = pulsed_g2_zero(correlate(ps, 0, 1, 0.5, 4 * period), period, n_side=3)
    gated = gate(ps, period, 0.0, pulse_end, 3 * t1)
    g_gated, g_err = pulsed_g2_zero(correlate(gated, 0, 1, 0.5, 4 * period), period, n_side=3)
    elapsed = time.perf_counter() - t0
    record(8, {
        "CW dip": (g0 < 0.1 and abs(chi2 - 1) < 5 * np.sqrt(2 / h.counts.size),
                   f"g2(0) {g0:.3f}, chi2/dof {chi2:.2f}, {pairs} pairs"),
        "ungated": (abs(raw - 0.3) <= 3 * raw_err, f"{raw:.3f} +- {raw_err:.3f}"),
        "gated": (g_gated <= 0.1, f"{g_gated:.3f} +- {g_err:.3f}"),
    }, elapsed, 60.0)
