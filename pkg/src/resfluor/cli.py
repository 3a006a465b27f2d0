"""Command-line entry point.

Every command reads one JSON config (``--config``), applies ``--set
path.to.field=value`` overrides, validates the result and writes
``summary.json`` plus one CSV per trace to ``<outdir>/<command>-<stamp>/``.
Each CSV starts with a ``# config: {...}`` line holding the resolved
config, followed by a header row.

Exit codes: 0 success, 2 config/input error, 3 fit non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import interference, readout, spectroscopy, tagstream
from .correlations import TPI_PAR, TPI_PERP, CorrelationTrace, g2_analytic, g2_regression
from .emitter import EmitterParams, PulseTrain
from .errors import ConvergenceError, FormatError, InputError, ParameterError, SeparationError
from .fitting import FitProblem, curve_fit, nls_fit

EXIT_OK, EXIT_CONFIG, EXIT_FIT, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class FitFailed(Exception):
    def __init__(self, message):
        super().__init__(message)


# ---------------------------------------------------------------- config

DEFAULTS = {
    "simulate-g2": {
        "emitter": {"t1": 5.5, "t2": 7.1},
        "drive": {"omega": 0.57, "detuning": 0.0},
        "tau": {"max": 50.0, "step": 0.05},
        "beta": None,
    },
    "tpi": {
        "mode": "cw",
        "emitter": {"t1": 5.5, "t2": 8.4},
        "drive": {"omega": 0.13, "omega_on": None, "omega_off": 0.0, "pulse_width": 5.0,
                  "edge_time": 0.3},
        "interferometer": {"delta_t": None, "eta": 0.25, "v0": 1.0, "script_v": 1.0,
                           "r1": 0.5, "r2": 0.5},
        "tau": {"max": None, "step": 0.05},
        "ctw_window": 50.0,
        "ctw_target": None,
        "gate_len": "auto",
    },
    "fit": {
        "model": None,
        "data": None,
        "p0": {},
        "options": {},
    },
    "readout": {
        "preset": None,
        "readout": {"r_bright": readout.CALIBRATED.r_bright, "r_dark": readout.CALIBRATED.r_dark,
                    "t_flip": readout.CALIBRATED.t_flip, "p_init": readout.CALIBRATED.p_init},
        "window": readout.CALIBRATED_WINDOW,
        "sweep": {"start": 10.0, "stop": 200.0, "step": 2.0},
        "simulate": {"shots": 0, "seed": 0},
    },
    "correlate": {
        "input": None,
        "format": None,
        "channels": [0, 1],
        "bin_width": 0.1,
        "max_lag": 50.0,
        "duration": None,
        "gate": None,
        "pulsed_period": None,
    },
}

FIT_MODELS = ("lorentzian", "saturation_joint", "rabi", "g2_analytic", "cw_tpi",
              "pulsed_cusps", "pumping")


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    if "=" not in assignment:
        raise ConfigError(None, f"--set expects path=value, got {assignment!r}")
    path, text = assignment.split("=", 1)
    keys = path.strip().split(".")
    if not all(keys):
        raise ConfigError(path, "empty path component")
    node = cfg
    for i, k in enumerate(keys[:-1]):
        if not isinstance(node.get(k), dict):
            if k in node and node[k] is not None:
                raise ConfigError(".".join(keys[:i + 1]), "is not a block")
            node[k] = {}
        node = node[k]
    node[keys[-1]] = _parse_value(text)


def resolve_config(command, config_path=None, overrides=()):
    cfg = copy.deepcopy(DEFAULTS[command])
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config", "top level must be an object")
        cfg = _merge(cfg, user)
    for s in overrides:
        apply_override(cfg, s)
    return cfg


def _get(cfg, path, kind=float, required=True, check=None, message=None):
    node = cfg
    for k in path.split("."):
        if not isinstance(node, dict) or k not in node:
            node = None
            break
        node = node[k]
    if node is None:
        if required:
            raise ConfigError(path, "is required")
        return None
    try:
        if kind is float:
            if isinstance(node, bool):
                raise TypeError
            value = float(node)
        elif kind is int:
            if isinstance(node, bool) or float(node) != int(node):
                raise TypeError
            value = int(node)
        else:
            value = kind(node)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected {kind.__name__}, got {node!r}") from None
    if check is not None and not check(value):
        raise ConfigError(path, message or f"invalid value {value!r}")
    return value


def _emitter(cfg, block="emitter"):
    t1 = _get(cfg, f"{block}.t1", check=lambda v: v > 0, message="t1 must be > 0")
    t2 = _get(cfg, f"{block}.t2", check=lambda v: v > 0, message="t2 must be > 0")
    try:
        return EmitterParams(t1, t2)
    except ParameterError as exc:
        raise ConfigError(block, str(exc)) from None


# ---------------------------------------------------------------- output


class RunWriter:
    """Writes the run directory; file contents depend only on config and seed."""

    def __init__(self, outdir, command, cfg, run_name=None):
        stamp = run_name or _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S")
        base = Path(outdir) / f"{command}-{stamp}"
        path, k = base, 1
        while path.exists() and run_name is None:
            path = base.with_name(f"{base.name}-{k}")
            k += 1
        self.path = path
        self.cfg = cfg
        self.command = command
        self._config_line = json.dumps(cfg, sort_keys=True, separators=(",", ":"))

    def _open(self, name):
        self.path.mkdir(parents=True, exist_ok=True)
        return open(self.path / name, "w", encoding="utf-8", newline="")

    def csv(self, name, columns: dict):
        cols = {k: np.asarray(v) for k, v in columns.items()}
        n = {v.size for v in cols.values()}
        if len(n) > 1:
            raise ValueError(f"columns of {name} differ in length")
        with self._open(name) as fh:
            fh.write(f"# config: {self._config_line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols.keys())
            for row in zip(*(v.tolist() for v in cols.values())):
                w.writerow([_fmt(x) for x in row])
        return name

    def summary(self, data: dict):
        doc = {"command": self.command, "config": self.cfg, **data}
        with self._open("summary.json") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


# ---------------------------------------------------------------- commands


def cmd_simulate_g2(cfg, out, threads):
    params = _emitter(cfg)
    omega = _get(cfg, "drive.omega", check=lambda v: v > 0, message="omega must be > 0")
    detuning = _get(cfg, "drive.detuning", required=False) or 0.0
    tmax = _get(cfg, "tau.max", check=lambda v: v > 0, message="must be > 0")
    step = _get(cfg, "tau.step", check=lambda v: 0 < v <= tmax, message="must lie in (0, tau.max]")
    beta = _get(cfg, "beta", required=False, check=lambda v: 0 <= v <= 1,
                message="beta must lie in [0, 1]")
    tau = np.linspace(-tmax, tmax, 2 * int(round(tmax / step)) + 1)
    g2 = g2_regression(params, omega, tau, detuning).values
    cols = {"tau_ns": tau, "g2": g2}
    summary = {"g2_zero": float(g2[tau.size // 2])}
    if detuning == 0:
        ref = g2_analytic(params, omega, 1.0, tau)
        diff = float(np.max(np.abs(g2 - ref)))
        summary["analytic_max_abs_diff"] = diff
        summary["analytic_match"] = diff < 1e-6
    if beta is not None:
        over = g2_analytic(params, omega, beta, tau)
        cols["g2_beta"] = over
        summary["beta"] = beta
        summary["g2_zero_beta"] = float(over[tau.size // 2])
    summary["files"] = [out.csv("g2.csv", cols)]
    return summary


def _interferometer(cfg, block="interferometer"):
    d = _get(cfg, f"{block}.delta_t", check=lambda v: v > 0, message="delta_t must be > 0")
    r1 = _get(cfg, f"{block}.r1", check=lambda v: 0 <= v <= 1, message="must lie in [0, 1]")
    r2 = _get(cfg, f"{block}.r2", check=lambda v: 0 <= v <= 1, message="must lie in [0, 1]")
    try:
        return interference.InterferometerConfig(
            r1=r1, t1r=1 - r1, r2=r2, t2r=1 - r2, delta_t=d,
            eta=_get(cfg, f"{block}.eta"), v0=_get(cfg, f"{block}.v0"),
            script_v=_get(cfg, f"{block}.script_v"))
    except InputError as exc:
        raise ConfigError(block, str(exc)) from None


def cmd_tpi(cfg, out, threads):
    mode = _get(cfg, "mode", kind=str, check=lambda v: v in ("cw", "pulsed"),
                message="mode must be 'cw' or 'pulsed'")
    params = _emitter(cfg)
    icfg = _interferometer(cfg)
    d = icfg.delta_t
    step = _get(cfg, "tau.step", check=lambda v: v > 0, message="must be > 0")
    caught = []
    summary = {"mode": mode}
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        if mode == "cw":
            omega = _get(cfg, "drive.omega", check=lambda v: v > 0, message="omega must be > 0")
            window = _get(cfg, "ctw_window", check=lambda v: v > 0, message="must be > 0")
            tmax = _get(cfg, "tau.max", required=False) or window
            if tmax < window:
                raise ConfigError("tau.max", "must be >= ctw_window")
            target = _get(cfg, "ctw_target", required=False, check=lambda v: v >= 0,
                          message="must be >= 0")
            if target is not None:
                try:
                    v0, _ = interference.calibrate_v0(params, omega, icfg, target, window, step)
                except ParameterError as exc:
                    raise ConfigError("ctw_target", str(exc)) from None
                icfg = replace(icfg, v0=v0)
                summary["calibrated_v0"] = v0
            tau = np.linspace(-tmax, tmax, 2 * int(round(tmax / step)) + 1)
            par, perp = interference.cw_tpi(params, omega, icfg, tau)
            vis = interference.hom_visibility(par, perp)
            c = interference.ctw(vis, window)
            summary.update({"ctw_ns": c.ctw, "ctw_window_ns": c.window,
                            "ctw_boundary_value": c.boundary_value, "ctw_converged": c.converged,
                            "visibility_zero": float(vis.values[tau.size // 2])})
            summary["files"] = [out.csv("tpi.csv", {"tau_ns": tau, "g2_par": par.values.real,
                                                    "g2_perp": perp.values.real,
                                                    "visibility": vis.values.real})]
        else:
            omega_on = _get(cfg, "drive.omega_on", check=lambda v: v > 0,
                            message="omega_on must be > 0")
            gate = cfg.get("gate_len", "auto")
            if gate not in ("auto", None):
                gate = _get(cfg, "gate_len", check=lambda v: v > 0, message="must be > 0")
            try:
                drive = PulseTrain(omega_on, _get(cfg, "drive.omega_off"),
                                   _get(cfg, "drive.pulse_width"), d, _get(cfg, "drive.edge_time"))
            except ParameterError as exc:
                raise ConfigError("drive", str(exc)) from None
            tmax = _get(cfg, "tau.max", required=False) or 2.5 * d
            if tmax < 2.5 * d:
                raise ConfigError("tau.max", "must be >= 2.5 delta_t")
            tau = np.linspace(-tmax, tmax, 2 * int(round(tmax / step)) + 1)
            try:
                par, perp = interference.pulsed_tpi(params, drive, icfg, tau, gate_len=gate, dt=step)
            except InputError as exc:
                raise ConfigError("gate_len", str(exc)) from None
            areas_perp = interference.peak_areas(perp, d)
            areas_par = interference.peak_areas(par, d)
            summary.update({
                "peak_areas_perp": areas_perp, "peak_areas_par": areas_par,
                "peak_ratio_perp": areas_perp / areas_perp[0],
                "v_hom": interference.pulsed_visibility(par, perp),
                "visibility_components": par.meta["visibility_components"],
                "gate_len": par.meta["gate_len"]})
            summary["files"] = [out.csv("tpi.csv", {"tau_ns": tau, "g2_par": par.values.real,
                                                    "g2_perp": perp.values.real})]
        caught = [str(x.message) for x in w]
    for msg in caught:
        print(f"warning: {msg}", file=sys.stderr)
    summary["warnings"] = caught
    return summary


def _load_columns(path_value, needed, optional=()):
    if path_value is None:
        raise ConfigError("data", "is required")
    path = Path(str(path_value))
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ConfigError("data", f"{path} holds no rows")
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    missing = [c for c in needed if c not in header]
    if missing:
        raise ConfigError("data", f"missing column(s) {missing}; found {header}")
    rows = []
    for i, row in enumerate(reader, start=2):
        try:
            rows.append([float(x) for x in row])
        except ValueError:
            raise ConfigError("data", f"non-numeric value on data row {i}") from None
        if len(row) != len(header):
            raise ConfigError("data", f"row {i} has {len(row)} fields, expected {len(header)}")
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    if not np.all(np.isfinite(arr)):
        raise ConfigError("data", "non-finite values")
    cols = {h: arr[:, i] for i, h in enumerate(header)}
    return {k: cols[k] for k in (*needed, *optional) if k in cols}


def _report_dict(rep):
    return rep.as_dict() if rep is not None else None


def _fit_lorentzian(cfg, out):
    d = _load_columns(cfg.get("data"), ("freq", "counts"), ("sigma",))
    p0 = cfg.get("p0") or None
    if p0:
        p0 = [_get(cfg, f"p0.{k}") for k in ("f0", "fwhm", "amp", "offset")]
    rep = spectroscopy.fit_lorentzian(d["freq"], d["counts"], p0, d.get("sigma"))
    model = spectroscopy.lorentzian(d["freq"], *rep.params)
    return rep, {"x": d["freq"], "data": d["counts"], "model": model}, \
        dict(zip(rep.names, rep.params.tolist()))


def _fit_saturation(cfg, out):
    d = _load_columns(cfg.get("data"), ("power", "rate", "linewidth"), ("rate_sigma", "width_sigma"))
    guess = _get(cfg, "p0.p0", required=False)
    fit = spectroscopy.fit_saturation(d["power"], d["rate"], d["linewidth"], d.get("rate_sigma"),
                                      d.get("width_sigma"), joint=True, p0_guess=guess)
    sp = fit.params
    mr = spectroscopy.saturation_rate(d["power"], sp)
    mw = spectroscopy.power_linewidth(d["power"], sp)
    x = np.concatenate([d["power"], d["power"]])
    resid = {"curve": np.array(["rate"] * d["power"].size + ["linewidth"] * d["power"].size),
             "x": x, "data": np.concatenate([d["rate"], d["linewidth"]]),
             "model": np.concatenate([mr, mw])}
    extra = fit.as_dict()
    extra.pop("reports")
    extra["t2_from_gamma0_ns"] = spectroscopy.linewidth_to_t2(sp.gamma0)
    return fit.reports[0], resid, extra


def _fit_rabi(cfg, out):
    d = _load_columns(cfg.get("data"), ("t", "signal"), ("sigma",))
    opts = "options"
    t1 = _get(cfg, f"{opts}.t1", check=lambda v: v > 0, message="t1 must be > 0")
    pw = _get(cfg, f"{opts}.pulse_width")
    period = _get(cfg, f"{opts}.period")
    edge = _get(cfg, f"{opts}.edge_time", required=False)
    edge = 0.3 if edge is None else edge
    max_iter = _get(cfg, f"{opts}.max_iter", kind=int, required=False, check=lambda v: v >= 1,
                    message="max_iter must be >= 1")
    p0 = {k: _get(cfg, f"p0.{k}") for k in spectroscopy.RABI_NAMES}
    fit = spectroscopy.fit_rabi(d["t"], d["signal"], t1, pw, period, p0, edge, d.get("sigma"),
                                max_iter=max_iter or 200)
    model = spectroscopy.rabi_trace(EmitterParams(t1, fit.t2),
                                    PulseTrain(fit.omega_on, fit.omega_off, pw, period, edge),
                                    fit.scale, fit.offset, d["t"])
    return fit.report, {"x": d["t"], "data": d["signal"], "model": model}, fit.as_dict()


def _fit_g2(cfg, out):
    d = _load_columns(cfg.get("data"), ("tau", "g2"), ("sigma",))
    params = _emitter(cfg, "options.emitter")
    p0 = [_get(cfg, "p0.omega", check=lambda v: v > 0, message="omega must be > 0"),
          _get(cfg, "p0.beta", required=False) or 1.0]
    rep = curve_fit(lambda x, om, b: g2_analytic(params, om, b, x), d["tau"], d["g2"], p0,
                    d.get("sigma"), ([1e-9, 0.0], [np.inf, 1.0]), names=["omega", "beta"])
    model = g2_analytic(params, *rep.params, d["tau"])
    return rep, {"x": d["tau"], "data": d["g2"], "model": model}, \
        dict(zip(rep.names, rep.params.tolist()))


def _fit_cw_tpi(cfg, out):
    d = _load_columns(cfg.get("data"), ("tau", "g2_par", "g2_perp"))
    o = cfg.get("options") or {}
    params = _emitter(cfg, "options.emitter")
    omega = _get(cfg, "options.omega", check=lambda v: v > 0, message="omega must be > 0")
    base = _interferometer({"interferometer": {**DEFAULTS["tpi"]["interferometer"],
                                               **o.get("interferometer", {})}})
    tau = d["tau"]

    def model(q):
        par, perp = interference.cw_tpi(params, omega, replace(base, v0=q[0], eta=q[1]), tau)
        return np.concatenate([par.values.real, perp.values.real])

    data = np.concatenate([d["g2_par"], d["g2_perp"]])
    p0 = [_get(cfg, "p0.v0", required=False) or 0.5, _get(cfg, "p0.eta", required=False) or base.eta]
    rep = nls_fit(FitProblem(lambda q: model(q) - data, p0, ([0.0, 0.0], [1.0, np.inf]),
                             names=["v0", "eta"]))
    if not rep.converged:
        raise ConvergenceError("cw_tpi fit did not converge", rep)
    curve = np.array(["g2_par"] * tau.size + ["g2_perp"] * tau.size)
    return rep, {"curve": curve, "x": np.concatenate([tau, tau]), "data": data,
                 "model": model(rep.params)}, dict(zip(rep.names, rep.params.tolist()))


def _fit_cusps(cfg, out):
    d = _load_columns(cfg.get("data"), ("tau", "g2_perp", "g2_par"))
    dt = _get(cfg, "options.delta_t", check=lambda v: v > 0, message="delta_t must be > 0")
    weighting = (cfg.get("options") or {}).get("weighting", "poisson")
    perp = CorrelationTrace(d["tau"], d["g2_perp"], TPI_PERP)
    par = CorrelationTrace(d["tau"], d["g2_par"], TPI_PAR)
    try:
        mp, ma, v, ve = interference.fit_cusp_pair(perp, par, dt, constrain_ratio=False,
                                                   weighting=weighting)
    except InputError as exc:
        raise ConfigError("data", str(exc)) from None
    tau = d["tau"]
    curve = np.array(["g2_perp"] * tau.size + ["g2_par"] * tau.size)
    resid = {"curve": curve, "x": np.concatenate([tau, tau]),
             "data": np.concatenate([d["g2_perp"], d["g2_par"]]),
             "model": np.concatenate([mp(tau), ma(tau)])}
    extra = {"tau0": mp.tau0, "tau0_err": mp.tau0_err, "areas_perp": mp.areas,
             "areas_par": ma.areas, "v_hom": v, "v_hom_err": ve}
    return mp.report, resid, extra


def _fit_pumping(cfg, out):
    d = _load_columns(cfg.get("data"), ("t", "population"))
    fit = readout.pumping_trace_fit(d["t"], d["population"])
    t = d["t"]
    tau = fit.tau if math.isfinite(fit.tau) else np.inf
    model = fit.floor + (1 - fit.floor) * np.exp(-(t - t[0]) / tau)
    extra = {"tau": fit.tau, "tau_err": fit.tau_err, "floor": fit.floor,
             "floor_err": fit.floor_err, "unbounded": fit.unbounded}
    return fit.report, {"x": t, "data": d["population"], "model": model}, extra


_FITTERS = {
    "lorentzian": _fit_lorentzian,
    "saturation_joint": _fit_saturation,
    "rabi": _fit_rabi,
    "g2_analytic": _fit_g2,
    "cw_tpi": _fit_cw_tpi,
    "pulsed_cusps": _fit_cusps,
    "pumping": _fit_pumping,
}


def cmd_fit(cfg, out, threads):
    name = cfg.get("model")
    if name not in _FITTERS:
        raise ConfigError("model", f"unknown model {name!r}; valid models: {', '.join(FIT_MODELS)}")
    try:
        rep, resid, extra = _FITTERS[name](cfg, out)
    except ConvergenceError as exc:
        out.summary({"model": name, "converged": False, "error": str(exc),
                     "report": _report_dict(exc.report)})
        raise FitFailed(str(exc)) from None
    except OSError:
        raise
    cols = dict(resid)
    cols["residual"] = np.asarray(resid["model"]) - np.asarray(resid["data"])
    files = [out.csv("residuals.csv", cols)]
    return {"model": name, "converged": True, "result": extra, "report": _report_dict(rep),
            "files": files}


def _readout_model(cfg):
    preset = cfg.get("preset")
    if preset is not None:
        if preset not in readout.PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; valid: {sorted(readout.PRESETS)}")
        model, window = readout.PRESETS[preset]
        return model, window
    t_flip = _get(cfg, "readout.t_flip", check=lambda v: v > 0, message="t_flip must be > 0")
    try:
        model = readout.ReadoutModel(_get(cfg, "readout.r_bright"), _get(cfg, "readout.r_dark"),
                                     t_flip, _get(cfg, "readout.p_init"))
    except ParameterError as exc:
        raise ConfigError("readout", str(exc)) from None
    window = _get(cfg, "window", check=lambda v: v > 0, message="window must be > 0")
    return model, window


def cmd_readout(cfg, out, threads):
    model, window = _readout_model(cfg)
    pb = readout.exact_count_dist(model.as_bright(), window)
    pd = readout.exact_count_dist(model.as_dark(), window)
    try:
        th = readout.find_threshold(pb, pd)
    except SeparationError as exc:
        raise ConfigError("readout", str(exc)) from None
    fd, fu, fa = readout.fidelities(pb, pd, th)
    size = max(pb.probs.size, pd.probs.size)
    cols = {"n": np.arange(size), "p_down": pb.padded(size), "p_up": pd.padded(size)}
    summary = {"model": {"r_bright": model.r_bright, "r_dark": model.r_dark,
                         "t_flip": model.t_flip, "p_init": model.p_init},
               "window_us": window, "n_th": th, "f_down": fd, "f_up": fu, "f_avg": fa}
    shots = _get(cfg, "simulate.shots", kind=int, required=False, check=lambda v: v >= 0,
                 message="must be >= 0") or 0
    if shots:
        seed = _get(cfg, "simulate.seed", kind=int, check=lambda v: v >= 0, message="must be >= 0")
        hb, hd = readout.simulate_shots(model, model, window, shots, seed, threads)
        size = max(size, hb.probs.size, hd.probs.size)
        cols = {"n": np.arange(size), "p_down": pb.padded(size), "p_up": pd.padded(size),
                "mc_down": hb.padded(size), "mc_up": hd.padded(size)}
        _, ok_b = readout.bin_agreement(hb, pb, shots)
        _, ok_d = readout.bin_agreement(hd, pd, shots)
        summary["simulation"] = {"shots": shots, "seed": seed, "agrees_3sigma": ok_b and ok_d}
    files = [out.csv("histograms.csv", cols)]
    sw = cfg.get("sweep")
    if sw:
        start = _get(cfg, "sweep.start", check=lambda v: v > 0, message="must be > 0")
        stop = _get(cfg, "sweep.stop", check=lambda v: v >= start, message="must be >= start")
        step = _get(cfg, "sweep.step", check=lambda v: v > 0, message="must be > 0")
        windows = start + step * np.arange(int(math.floor((stop - start) / step + 1e-9)) + 1)
        table = readout.sweep_window(model, windows)
        files.append(out.csv("sweep.csv", {"window_us": table.window, "n_th": table.n_th,
                                           "f_down": table.f_down, "f_up": table.f_up,
                                           "f_avg": table.f_avg}))
        summary["sweep_best_window_us"] = table.best_window
        summary["sweep_best_f_avg"] = float(table.f_avg[table.best])
    summary["files"] = files
    return summary


def cmd_correlate(cfg, out, threads):
    src = cfg.get("input")
    if src is None:
        raise ConfigError("input", "is required")
    ch = cfg.get("channels")
    if not (isinstance(ch, list) and len(ch) == 2 and all(isinstance(c, int) for c in ch)):
        raise ConfigError("channels", "expected a list of two integers")
    bw = _get(cfg, "bin_width", check=lambda v: v > 0, message="bin_width must be > 0")
    max_lag = _get(cfg, "max_lag", check=lambda v: v >= 0, message="max_lag must be >= 0")
    duration = _get(cfg, "duration", required=False, check=lambda v: v > 0, message="must be > 0")
    fmt = cfg.get("format")
    g = cfg.get("gate")
    gate_args = None
    if g is not None:
        period = _get(cfg, "gate.period", check=lambda v: v > 0, message="period must be > 0")
        start = _get(cfg, "gate.start", check=lambda v: v >= 0, message="must be >= 0")
        length = _get(cfg, "gate.len", check=lambda v: v >= 0, message="must be >= 0")
        phase = _get(cfg, "gate.phase", required=False) or 0.0
        if start + length > period:
            raise ConfigError("gate", "gate wider than period")
        gate_args = (period, phase, start, length)
    pulsed = _get(cfg, "pulsed_period", required=False, check=lambda v: v > 0, message="must be > 0")
    stream = tagstream.read_tags(src, fmt)
    if gate_args is not None:
        stream = tagstream.gate(stream, *gate_args)
    try:
        hist = tagstream.correlate(stream, ch[0], ch[1], bw, max_lag, duration, threads)
    except InputError as exc:
        raise ConfigError("channels", str(exc)) from None
    summary = {"records": len(stream), "histogram": hist.metadata, "norm": hist.norm}
    if pulsed is not None and hist.counts.sum() > 0:
        try:
            g0, err = tagstream.pulsed_g2_zero(hist, pulsed)
            summary["pulsed_g2_zero"] = g0
            summary["pulsed_g2_zero_err"] = err
        except InputError as exc:
            summary["pulsed_g2_zero_error"] = str(exc)
    summary["files"] = [out.csv("histogram.csv", {"tau_ns": hist.centers, "counts": hist.counts,
                                                  "g2": hist.normalized})]
    return summary


COMMANDS = {
    "simulate-g2": cmd_simulate_g2,
    "tpi": cmd_tpi,
    "fit": cmd_fit,
    "readout": cmd_readout,
    "correlate": cmd_correlate,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="resfluor", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                       help="override a config field; VALUE is parsed as JSON when possible")
        p.add_argument("--outdir", default="./runs", help="parent of the run directory")
        p.add_argument("--run-name", help="fixed run directory suffix instead of a UTC timestamp")
        p.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads if args.threads is not None else tagstream.default_threads()
    try:
        if threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        cfg = resolve_config(args.command, args.config, args.overrides)
        out = RunWriter(args.outdir, args.command, cfg, args.run_name)
        summary = COMMANDS[args.command](cfg, out, threads)
        out.summary(summary)
    except FitFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (ConfigError, InputError, ParameterError, FormatError, SeparationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(out.path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
