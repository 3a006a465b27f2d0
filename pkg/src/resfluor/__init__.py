"""Resonance fluorescence, two-photon interference and spin readout of a driven two-level emitter."""

from .correlations import (
    CorrelationTrace,
    TwoTimeMap,
    coherent_fraction,
    g1_regression,
    g2_analytic,
    g2_regression,
    periodic_state,
    two_time_map,
)
from .emitter import (
    CW,
    DensityState,
    EmitterParams,
    PulseTrain,
    Trajectory,
    build_liouvillian,
    evolve,
    power_to_rabi,
    rabi_to_power,
    steady_state,
)
from .errors import (
    ConvergenceError,
    FormatError,
    InputError,
    OrderError,
    ParameterError,
    SeparationError,
)
from .fitting import FitProblem, FitReport, curve_fit, nls_fit
from .interference import (
    CoalescenceWindow,
    CuspModel,
    InterferometerConfig,
    calibrate_v0,
    ctw,
    cw_tpi,
    fit_cusp_pair,
    fit_cusps,
    hom_visibility,
    peak_areas,
    pulsed_tpi,
    pulsed_visibility,
)
from .kernels import BACKEND
from .readout import (
    CountHistogram,
    ReadoutModel,
    SweepTable,
    exact_count_dist,
    fidelities,
    find_threshold,
    pumping_trace_fit,
    simulate_shots,
    sweep_window,
)
from .spectroscopy import (
    SaturationParams,
    fit_lorentzian,
    fit_ple_family,
    fit_rabi,
    fit_saturation,
    linewidth_to_t2,
    rabi_trace,
)
from .tagstream import Histogram, TagRecord, TagStream, correlate, gate, read_tags, write_tags

__version__ = "0.1.0"
