import numpy as np
import pytest

from resfluor import kernels

BACKENDS = ["python"] + (["compiled"] if kernels._core is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route the package through one kernel implementation."""
    impl = kernels.get(request.param)
    monkeypatch.setattr(kernels, "integrate_linear", impl.integrate_linear)
    monkeypatch.setattr(kernels, "pair_histogram", impl.pair_histogram)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
