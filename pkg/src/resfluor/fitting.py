"""Bounded Levenberg-Marquardt least squares with central-difference Jacobians."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InputError


@dataclass
class FitProblem:
    """``residual(params)`` returns model - data; it is multiplied by ``weights``."""

    residual: Callable[[np.ndarray], np.ndarray]
    p0: Sequence[float]
    bounds: tuple | None = None
    weights: np.ndarray | None = None
    names: Sequence[str] | None = None

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        n = self.p0.size
        if self.bounds is None:
            lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
        else:
            lo = np.broadcast_to(np.asarray(self.bounds[0], dtype=float), (n,)).copy()
            hi = np.broadcast_to(np.asarray(self.bounds[1], dtype=float), (n,)).copy()
        if np.any(lo > hi):
            raise InputError("lower bound above upper bound")
        if np.any(self.p0 < lo) or np.any(self.p0 > hi):
            raise InputError("initial parameters lie outside the bounds")
        self.bounds = (lo, hi)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if np.any(~(self.weights > 0)):
                raise InputError("weights must be > 0")


@dataclass
class FitReport:
    params: np.ndarray
    covariance: np.ndarray
    stderr: np.ndarray
    chi2: float
    redchi: float
    iterations: int
    nfev: int
    converged: bool
    message: str = ""
    rank_deficient: bool = False
    residual: np.ndarray = field(default=None, repr=False)
    cost_history: list = field(default_factory=list, repr=False)
    names: Sequence[str] | None = None

    def as_dict(self):
        out = {
            "params": self.params.tolist(),
            "stderr": self.stderr.tolist(),
            "covariance": self.covariance.tolist(),
            "chi2": self.chi2,
            "redchi": self.redchi,
            "iterations": self.iterations,
            "nfev": self.nfev,
            "converged": self.converged,
            "message": self.message,
            "rank_deficient": self.rank_deficient,
        }
        if self.names is not None:
            out["names"] = list(self.names)
        return out


def jacobian(fun, p, lo, hi, rel_step=1e-6, abs_step=1e-9):
    """Central differences with step max(rel_step*|p|, abs_step), kept inside bounds."""
    p = np.asarray(p, dtype=float)
    f0 = None
    cols = []
    nfev = 0
    for j in range(p.size):
        h = max(rel_step * abs(p[j]), abs_step)
        up, dn = p.copy(), p.copy()
        up[j] = min(p[j] + h, hi[j])
        dn[j] = max(p[j] - h, lo[j])
        if up[j] == dn[j]:
            if f0 is None:
                f0 = fun(p)
                nfev += 1
            cols.append(np.zeros_like(f0))
            continue
        cols.append((fun(up) - fun(dn)) / (up[j] - dn[j]))
        nfev += 2
    return np.column_stack(cols), nfev


def nls_fit(problem: FitProblem, max_iter: int = 500, lam0: float = 1e-3,
            ftol: float = 1e-10, gtol: float = 1e-10,
            scale_covariance: bool = True) -> FitReport:
    """Minimise the weighted sum of squared residuals.

    Damping is scaled by diag(J^T J) (Marquardt), multiplied by 0.3 after an
    accepted step and by 2 after a rejected one. A run that hits
    ``max_iter`` returns with ``converged=False`` rather than raising.
    """
    lo, hi = problem.bounds
    w = problem.weights

    def fun(p):
        r = np.asarray(problem.residual(p), dtype=float).ravel()
        return r * w if w is not None else r

    p = np.clip(problem.p0.astype(float), lo, hi)
    r = fun(p)
    nfev = 1
    if not np.all(np.isfinite(r)):
        raise InputError("residual is not finite at the initial parameters")
    cost = float(r @ r)
    history = [cost]
    lam = lam0
    converged = False
    message = "maximum iterations reached"
    it = 0
    J, n = jacobian(fun, p, lo, hi)
    nfev += n
    while it < max_iter:
        it += 1
        g = J.T @ r
        # parameters pinned at a bound with descent pointing outward sit out this step
        pinned = ((p <= lo) & (g > 0)) | ((p >= hi) & (g < 0))
        free = ~pinned
        if cost == 0.0 or not free.any() or np.max(np.abs(g[free])) < gtol:
            converged = True
            message = "gradient below tolerance"
            break
        A = (J.T @ J)[np.ix_(free, free)]
        d = np.diag(A).copy()
        d[d <= 0] = max(np.max(d), 1.0) * 1e-12
        step = np.zeros_like(p)
        try:
            step[free] = np.linalg.solve(A + lam * np.diag(d), -g[free])
        except np.linalg.LinAlgError:
            step[free] = np.linalg.lstsq(A + lam * np.diag(d), -g[free], rcond=None)[0]
        p_new = np.clip(p + step, lo, hi)
        r_new = fun(p_new)
        nfev += 1
        cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
        if cost_new < cost:
            rel = (cost - cost_new) / cost
            p, r, cost = p_new, r_new, cost_new
            history.append(cost)
            lam *= 0.3
            if rel < ftol or cost == 0.0:
                converged = True
                message = "relative cost change below tolerance"
                break
            J, n = jacobian(fun, p, lo, hi)
            nfev += n
        else:
            lam *= 2.0
            if lam > 1e16 or np.all(p_new == p):
                converged = True
                message = "no further reduction possible"
                break
    J, n = jacobian(fun, p, lo, hi)
    nfev += n
    sv = np.linalg.svd(J, compute_uv=False) if J.size else np.array([0.0])
    rank_def = bool(sv.size == 0 or sv[-1] <= 1e-10 * max(sv[0], 1e-300))
    if rank_def:
        warnings.warn("Jacobian is rank deficient; uncertainties are unreliable", RuntimeWarning,
                      stacklevel=2)
    cov = np.linalg.pinv(J.T @ J)
    dof = max(r.size - p.size, 1)
    redchi = cost / dof
    if scale_covariance:
        cov = cov * redchi
    cov = 0.5 * (cov + cov.T)
    stderr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitReport(p, cov, stderr, cost, redchi, it, nfev, converged, message, rank_def,
                     r, history, problem.names)


def curve_fit(model, x, y, p0, sigma=None, bounds=None, names=None, **kw) -> FitReport:
    """Convenience wrapper: fit ``model(x, *p)`` to ``y``."""
    x = np.asarray(x)
    y = np.asarray(y, dtype=float)
    weights = None if sigma is None else 1.0 / np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
    prob = FitProblem(lambda p: model(x, *p) - y, p0, bounds, weights, names)
    return nls_fit(prob, **kw)
