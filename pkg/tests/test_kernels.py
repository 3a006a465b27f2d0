import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from resfluor import kernels
from resfluor.emitter import EmitterParams, generator_parts

from conftest import BACKENDS


def brute_histogram(ta, tb, bw, nb, same):
    d = tb[None, :].astype(np.int64) - ta[:, None].astype(np.int64)
    if same:
        np.fill_diagonal(d, np.iinfo(np.int64).max)
    d = d.ravel()
    d = d[np.abs(d) < (2 * nb + 2) * bw]
    # bins centred on k*bw, half-way lags rounded away from zero
    k = np.sign(d) * ((2 * np.abs(d) + bw) // (2 * bw))
    k = k[np.abs(k) <= nb]
    return np.bincount((k + nb).astype(int), minlength=2 * nb + 1)


@pytest.mark.parametrize("name", BACKENDS)
def test_integrate_constant_drive_matches_expm(name):
    impl = kernels.get(name)
    drift, cpl = generator_parts(EmitterParams(5.5, 7.1))
    t = np.linspace(0, 30, 61)
    omega = 0.57
    x0 = np.array([1, 0, 0, 0], complex)
    out = impl.integrate_linear(drift, cpl, np.array([0.0]), np.array([30.0]),
                                np.array([omega]), np.array([omega]), x0, t, 1e-10, 1e-12)
    gen = drift + omega * cpl
    ref = np.array([expm(gen * ti) @ x0 for ti in t])
    assert np.max(np.abs(out - ref)) < 1e-8


@pytest.mark.parametrize("name", BACKENDS)
def test_integrate_linear_ramp(name):
    # with a pure ramp the population block has no closed form; check against fine expm stepping
    impl = kernels.get(name)
    drift, cpl = generator_parts(EmitterParams(5.5, 9.0))
    x0 = np.array([1, 0, 0, 0], complex)
    t = np.array([0.0, 0.5, 1.0, 2.0])
    out = impl.integrate_linear(drift, cpl, np.array([0.0]), np.array([2.0]),
                                np.array([0.0]), np.array([1.2]), x0, t, 1e-10, 1e-12)
    n = 8000
    h = 2.0 / n
    record = {0: None, 2000: None, 4000: None, 8000: None}
    x = x0.copy()
    for i in range(n + 1):
        if i in record:
            record[i] = x.copy()
        if i < n:
            om = 1.2 * (i + 0.5) * h / 2.0  # midpoint drive of the step
            x = expm((drift + om * cpl) * h) @ x
    ref = np.array([record[k] for k in sorted(record)])
    assert np.max(np.abs(out - ref)) < 1e-7


def test_backends_agree_on_pulse_segments():
    if "compiled" not in BACKENDS:
        pytest.skip("compiled kernels not built")
    drift, cpl = generator_parts(EmitterParams(5.5, 9.68))
    s0 = np.array([0.0, 0.3, 5.0, 5.3])
    s1 = np.array([0.3, 5.0, 5.3, 25.0])
    w0 = np.array([0.0, 0.63, 0.63, 0.0])
    w1 = np.array([0.63, 0.63, 0.0, 0.0])
    t = np.linspace(0, 25, 251)
    x0 = np.array([1, 0, 0, 0], complex)
    a = kernels.get("python").integrate_linear(drift, cpl, s0, s1, w0, w1, x0, t, 1e-10, 1e-12)
    b = kernels.get("compiled").integrate_linear(drift, cpl, s0, s1, w0, w1, x0, t, 1e-10, 1e-12)
    assert np.max(np.abs(a - b)) < 1e-8


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=40, deadline=None)
@given(
    ta=st.lists(st.integers(0, 5000), max_size=60),
    tb=st.lists(st.integers(0, 5000), max_size=60),
    bw=st.integers(1, 50),
    nb=st.integers(0, 20),
)
def test_pair_histogram_matches_brute_force(name, ta, tb, bw, nb):
    impl = kernels.get(name)
    a = np.sort(np.array(ta, dtype=np.int64))
    b = np.sort(np.array(tb, dtype=np.int64))
    got = impl.pair_histogram(a, b, bw, nb, False)
    np.testing.assert_array_equal(got, brute_histogram(a, b, bw, nb, False))
    got_same = impl.pair_histogram(a, a, bw, nb, True)
    np.testing.assert_array_equal(got_same, brute_histogram(a, a, bw, nb, True))


def test_pair_histogram_backends_bit_identical(rng):
    if "compiled" not in BACKENDS:
        pytest.skip("compiled kernels not built")
    a = np.sort(rng.integers(0, 10**9, 20000)).astype(np.int64)
    b = np.sort(rng.integers(0, 10**9, 20000)).astype(np.int64)
    for same in (False, True):
        bb = a if same else b
        x = kernels.get("python").pair_histogram(a, bb, 500, 200, same)
        y = kernels.get("compiled").pair_histogram(a, bb, 500, 200, same)
        np.testing.assert_array_equal(x, y)


def test_env_var_forces_fallback():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-c", "import resfluor.kernels as k; print(k.BACKEND)"],
                         env={"RESFLUOR_PURE_PYTHON": "1", "PATH": ""}, capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == "python"
