import warnings
from dataclasses import replace

import numpy as np
import pytest

from resfluor.correlations import TPI_PAR, TPI_PERP, VISIBILITY, CorrelationTrace, g2_regression
from resfluor.emitter import EmitterParams, PulseTrain
from resfluor.errors import InputError
from resfluor.interference import (
    InterferometerConfig,
    calibrate_v0,
    ctw,
    cw_tpi,
    default_halfwidth,
    fit_cusp_pair,
    fit_cusps,
    hom_visibility,
    peak_areas,
    pulsed_tpi,
    pulsed_visibility,
)

CW_PARAMS = EmitterParams(5.5, 8.4)
PI_PULSE = PulseTrain(np.pi / 5.0, 0.0, 5.0, 25.0, edge_time=0.3)


def trace(kind, tau, values, **meta):
    return CorrelationTrace(np.asarray(tau, float), np.asarray(values, float), kind, meta)


def test_config_validation():
    with pytest.raises(InputError):
        InterferometerConfig(r1=0.6, t1r=0.6)
    with pytest.raises(InputError):
        InterferometerConfig(delta_t=0)
    with pytest.raises(InputError):
        InterferometerConfig(v0=1.5)
    assert InterferometerConfig().norm == pytest.approx(0.25)


def test_cw_satellite_dips_at_fibre_delay():
    cfg = InterferometerConfig(delta_t=25.0, eta=0.0)
    tau = np.linspace(-40, 40, 801)
    par, perp = cw_tpi(CW_PARAMS, 0.13, cfg, tau)
    g = perp.values
    near = lambda x: np.argmin(np.abs(tau - x))
    for c in (-25.0, 25.0):
        assert g[near(c)] < g[near(c - 8)] and g[near(c)] < g[near(c + 8)]
    # the outer dips are shallower than the central one
    assert g[near(0)] < g[near(25)]


def test_cw_traces_approach_one():
    cfg = InterferometerConfig(delta_t=25.0, eta=0.25)
    par, perp = cw_tpi(CW_PARAMS, 0.13, cfg, [300.0, 400.0])
    np.testing.assert_allclose(perp.values, 1.0, atol=1e-6)
    # parallel trace carries the coherent-fraction interference term at long lags
    assert np.all(par.values <= perp.values)


def test_cw_parallel_dip_deeper():
    cfg = InterferometerConfig(delta_t=25.0, eta=0.25)
    tau = np.linspace(-20, 20, 201)
    par, perp = cw_tpi(CW_PARAMS, 0.13, cfg, tau, params_perp=EmitterParams(5.5, 8.0))
    assert par.values[100] < perp.values[100]


def test_cw_symmetry_and_equal_when_no_overlap():
    tau = np.linspace(-30, 30, 121)
    cfg = InterferometerConfig(delta_t=25.0, v0=0.0)
    par, perp = cw_tpi(CW_PARAMS, 0.13, cfg, tau)
    np.testing.assert_allclose(par.values, perp.values, atol=1e-15)
    cfg = InterferometerConfig(delta_t=25.0, v0=0.7)
    par, perp = cw_tpi(CW_PARAMS, 0.13, cfg, tau)
    np.testing.assert_allclose(par.values, par.values[::-1], atol=1e-6)
    np.testing.assert_allclose(perp.values, perp.values[::-1], atol=1e-6)


def test_cw_perp_matches_formula_oracle():
    # orthogonal trace assembled by hand from g2 at tau, tau +- delta_t
    tau = np.array([-7.0, 0.0, 3.0, 25.0])
    cfg = InterferometerConfig(delta_t=25.0, eta=0.25)
    _, perp = cw_tpi(CW_PARAMS, 0.13, cfg, tau)
    g = lambda x: g2_regression(CW_PARAMS, 0.13, x).values
    num = 0.25 * 0.5 * g(tau) + 0.25 * (0.25 * g(tau + 25) + 0.25 * g(tau - 25))
    ref = 1 - 1 / 1.25**2 + num / (0.25 * 1.25**2)
    np.testing.assert_allclose(perp.values, ref, atol=1e-10)


def test_background_reduces_dip_depth():
    tau = np.array([0.0])
    depths = []
    for eta in (0.0, 0.1, 0.25, 0.5, 1.0):
        par, _ = cw_tpi(CW_PARAMS, 0.13, InterferometerConfig(delta_t=25.0, eta=eta), tau)
        depths.append(1 - par.values[0])
    assert np.all(np.diff(depths) <= 1e-12)


def test_hom_visibility_limits():
    tau = np.linspace(-1, 1, 5)
    a = trace(TPI_PERP, tau, [1, 2, 3, 2, 1])
    assert np.all(hom_visibility(trace(TPI_PAR, tau, a.values), a).values == 0)
    v = hom_visibility(trace(TPI_PAR, tau, np.zeros(5)), a)
    np.testing.assert_allclose(v.values, 1.0)
    with pytest.raises(InputError):
        hom_visibility(trace(TPI_PAR, tau + 1, a.values), a)


def test_visibility_peaks_at_zero():
    cfg = InterferometerConfig(delta_t=25.0, eta=0.25)
    tau = np.linspace(-50, 50, 2001)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v = hom_visibility(*cw_tpi(CW_PARAMS, 0.13, cfg, tau)).values
    assert np.argmax(v) == 1000
    assert v[1000 + 200] < v[1000]  # lower ten T2 ... away from zero


def test_ctw_zero_and_coverage():
    tau = np.linspace(-50, 50, 101)
    c = ctw(trace(VISIBILITY, tau, np.zeros(101)), 50.0)
    assert c.ctw == 0 and c.converged
    with pytest.raises(InputError):
        ctw(trace(VISIBILITY, tau, np.zeros(101)), 60.0)
    with pytest.warns(RuntimeWarning):
        c = ctw(trace(VISIBILITY, tau, np.full(101, 0.5)), 50.0)
    assert c.ctw == pytest.approx(50.0) and not c.converged


def test_ctw_calibration_measured_emitter():
    cfg = InterferometerConfig(delta_t=25.0, eta=0.25)
    v0, value = calibrate_v0(CW_PARAMS, 0.13, cfg, 5.8)
    assert 0 <= v0 <= 1
    assert value == pytest.approx(5.8)
    # CTW is linear in v0
    tau = np.arange(-50, 50.025, 0.05)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        c = ctw(hom_visibility(*cw_tpi(CW_PARAMS, 0.13, replace(cfg, v0=v0), tau)), 50.0)
    assert c.ctw == pytest.approx(5.8, abs=1e-6)


@pytest.fixture(scope="module")
def pulsed_pair():
    cfg = InterferometerConfig(delta_t=25.0, script_v=0.649)
    with pytest.warns(RuntimeWarning, match="delta_t < 5 t1"):
        return pulsed_tpi(EmitterParams(5.5, 9.68), PI_PULSE, cfg)


def test_pulsed_five_peaks_distinguishable():
    cfg = InterferometerConfig(delta_t=25.0, script_v=0.0)
    with pytest.warns(RuntimeWarning, match="delta_t < 5 t1"):
        par, perp = pulsed_tpi(EmitterParams(5.5, 9.68), PI_PULSE, cfg)
    areas = peak_areas(perp, 25.0)
    np.testing.assert_allclose(areas / areas[0], [1, 2, 2, 2, 1], rtol=0.03)
    np.testing.assert_allclose(par.values, perp.values, atol=1e-12)
    assert pulsed_visibility(par, perp) == 0.0


def test_pulsed_side_peaks_identical_and_symmetric(pulsed_pair):
    par, perp = pulsed_pair
    tau = perp.tau
    side = np.abs(tau) > perp.meta["support"]  # outside the gated central peak
    np.testing.assert_allclose(par.values[side], perp.values[side], atol=1e-6)
    np.testing.assert_allclose(perp.values, perp.values[::-1], atol=1e-6)
    np.testing.assert_allclose(par.values, par.values[::-1], atol=1e-6)
    assert peak_areas(perp, 25.0)[0] == pytest.approx(1.0, rel=1e-3)


def test_pulsed_visibility_reference(pulsed_pair):
    v = pulsed_visibility(*pulsed_pair)
    assert 0.55 <= v <= 0.66
    assert v == pytest.approx(0.6009, abs=5e-4)


def test_pulsed_visibility_monotone_in_overlap():
    from resfluor.interference import pulsed_components

    p = EmitterParams(5.5, 9.68)
    base = InterferometerConfig(delta_t=25.0)
    comp = pulsed_components(p, PI_PULSE, base)
    vals = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for sv in (0.0, 0.25, 0.5, 0.75, 1.0):
            vals.append(pulsed_visibility(*pulsed_tpi(p, PI_PULSE, replace(base, script_v=sv),
                                                      components=comp)))
    assert np.all(np.diff(vals) >= 0) and vals[0] == 0


def test_pulsed_full_overlap_ideal_emitter():
    p = EmitterParams(5.5, 11.0)
    drive = PulseTrain(np.pi / 0.5, 0.0, 0.5, 50.0, edge_time=0.05)
    cfg = InterferometerConfig(delta_t=50.0, script_v=1.0, eta=0.0)
    par, perp = pulsed_tpi(p, drive, cfg, gate_len=45.0)
    a = peak_areas(par, 50.0)
    assert a[2] < 0.05 * a[1]


def test_pulsed_delta_t_independence():
    p = EmitterParams(5.5, 9.68)
    vals = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for d in (25.0, 50.0):
            drive = PulseTrain(np.pi / 5.0, 0.0, 5.0, d, edge_time=0.3)
            cfg = InterferometerConfig(delta_t=d, script_v=0.649)
            par, perp = pulsed_tpi(p, drive, cfg)
            # same integration window for both delays; the default one grows with delta_t
            vals.append((pulsed_visibility(par, perp, 8.5), par.meta["visibility_components"]))
    for a, b in zip(*vals):
        assert abs(b - a) / a < 0.01


def test_pulsed_visibility_limits():
    tau = np.linspace(-62.5, 62.5, 2501)
    perp = trace(TPI_PERP, tau, np.exp(-np.abs(tau) / 5.5), delta_t=25.0)
    par = trace(TPI_PAR, tau, perp.values.copy(), delta_t=25.0)
    assert pulsed_visibility(par, perp) == 0
    zero_c = np.where(np.abs(tau) <= 12.5, 0.0, perp.values)
    assert pulsed_visibility(trace(TPI_PAR, tau, zero_c, delta_t=25.0), perp) == pytest.approx(1.0)
    with pytest.raises(InputError):
        pulsed_visibility(par, perp, peak_halfwidth=13.0)
    assert default_halfwidth(25.0, 16.5) == pytest.approx(8.5)
    assert default_halfwidth(25.0, None) == pytest.approx(12.475)


def cusp_histogram(areas, tau0, delta_t=25.0, kind=TPI_PERP):
    tau = np.linspace(-2.5 * delta_t, 2.5 * delta_t, 2501)
    y = sum(a / (2 * tau0) * np.exp(-np.abs(tau - c) / tau0)
            for a, c in zip(areas, delta_t * np.arange(-2, 3)))
    return trace(kind, tau, y)


def test_fit_cusps_round_trip():
    areas = np.array([1.0, 2.0, 1.3, 2.0, 1.0])
    m = fit_cusps(cusp_histogram(areas, 5.5), 25.0)
    np.testing.assert_allclose(m.areas, areas, rtol=0.01)
    assert m.tau0 == pytest.approx(5.5, rel=0.01)
    m = fit_cusps(cusp_histogram(areas, 5.5), 25.0, constrain_ratio=True, weighting="uniform")
    np.testing.assert_allclose(m.areas, areas, rtol=0.01)
    m = fit_cusps(cusp_histogram(areas, 5.5), 25.0, tau0=5.5)
    np.testing.assert_allclose(m.areas, areas, rtol=1e-6)


def test_fit_cusp_pair_visibility():
    perp = cusp_histogram([1, 2, 2, 2, 1], 5.5)
    par = cusp_histogram([1, 2, 2 * (1 - 0.6), 2, 1], 5.5, kind=TPI_PAR)
    mp, ma, v, err = fit_cusp_pair(perp, par, 25.0)
    assert v == pytest.approx(0.6, abs=1e-4)
    assert mp.tau0 == pytest.approx(5.5, rel=1e-3)


def test_fit_cusps_on_pulsed_model_tau0_near_t1(pulsed_pair):
    _, perp = pulsed_pair
    m = fit_cusps(perp, 25.0)
    assert m.tau0 == pytest.approx(5.5, rel=0.15)


def test_fit_cusps_needs_coverage():
    h = cusp_histogram([1, 2, 2, 2, 1], 5.5)
    short = trace(TPI_PERP, h.tau[100:-100], h.values[100:-100])
    with pytest.raises(InputError):
        fit_cusps(short, 25.0)
