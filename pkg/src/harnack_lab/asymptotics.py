"""Closed-form ODE oracles, comparison integrators and rate fits.

The spatially homogeneous reduction of the equation is the Bernoulli ODE
``u' = a u + b u^p``; its closed form is the single source of truth for
homogeneous dynamics.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from harnack_lab.errors import BlowUp, DomainError, NonConvergent, SuiteFailure
from harnack_lab.solver import EquationParams, Trajectory


def ode_closed_form(params: EquationParams, u0: float, t):
    """Exact solution of ``u' = a u + b u^p``, ``u(0) = u0``, for ``t >= 0``.

    Uses the substitution ``w = u^(1-p)`` which turns the equation linear.
    """
    if not u0 > 0:
        raise DomainError(f"u0 must be positive, got {u0}")
    a, b, p = params.a, params.b, params.p
    t = np.asarray(t, dtype=float)
    ustar = params.equilibrium
    if ustar is not None and u0 == ustar:
        out = np.full_like(t, ustar)
        return float(out) if out.ndim == 0 else out
    w0 = u0 ** (1.0 - p)
    if a > 0:
        # w0 e^{-kt} - (b/a)(1 - e^{-kt}) with expm1 so that a -> 0 recovers the a = 0 line
        k = a * (p - 1.0)
        w = w0 * np.exp(-k * t) + (-b) * (p - 1.0) * (-np.expm1(-k * t) / k)
    else:
        w = w0 + (p - 1.0) * (-b) * t
    if np.any(w <= 0):
        raise DomainError("closed form left the positive range")
    u = w ** (-1.0 / (p - 1.0))
    return float(u) if u.ndim == 0 else u


@dataclass
class OdeSolution:
    """Closed-form homogeneous solution with its validity interval."""

    params: EquationParams
    u0: float
    t_max: float = math.inf

    def __call__(self, t):
        return ode_closed_form(self.params, self.u0, t)

    def residual(self, ts: Sequence[float], eps: float = 1e-6) -> float:
        """Max of ``|u' - (a u + b u^p)|`` with a centred difference of step eps."""
        ts = np.asarray(ts, dtype=float)
        ts = ts[ts >= eps]
        du = (self(ts + eps) - self(ts - eps)) / (2 * eps)
        return float(np.max(np.abs(du - self.params.reaction(self(ts)))))


def ode_reference(params: EquationParams, u0: float, t_eval: Sequence[float], rtol=1e-12, atol=1e-14) -> np.ndarray:
    """High-order adaptive RK reference (DOP853); only used to validate the closed form."""
    t_eval = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(
        lambda t, y: params.reaction(y),
        (0.0, float(t_eval[-1])),
        [u0],
        method="DOP853",
        t_eval=t_eval,
        rtol=rtol,
        atol=atol,
    )
    return sol.y[0]


@dataclass
class ComparisonResult:
    times: np.ndarray
    values: np.ndarray
    classification: str  # "to-equilibrium", "decay" or "bounded"
    target: Optional[float] = None


def ode_comparison_w(
    delta: float,
    C: float,
    a: float,
    b: float,
    p: float,
    t_start: float,
    w_start: float,
    t_end: float,
    blowup_level: float = 1e8,
) -> ComparisonResult:
    """Integrate ``w' = delta |a w + b w^p| - C w / t`` from ``(t_start, w_start)``.

    Raises ``BlowUp`` (carrying the escape time) when ``w`` exceeds
    ``blowup_level`` before ``t_end``.
    """
    if not t_start > 0 or not w_start > 0:
        raise DomainError("t_start and w_start must be positive")

    def f(t, y):
        w = y[0]
        return [delta * abs(a * w + b * abs(w) ** p) - C * w / t]

    def escape(t, y):
        return y[0] - blowup_level

    escape.terminal = True
    escape.direction = 1

    sol = solve_ivp(
        f,
        (t_start, t_end),
        [w_start],
        method="DOP853",
        events=escape,
        rtol=1e-10,
        atol=1e-13,
        dense_output=False,
        max_step=(t_end - t_start) / 200,
    )
    if sol.t_events[0].size:
        raise BlowUp(
            f"w escaped past {blowup_level:g} at t={sol.t_events[0][0]:.6g}",
            time=float(sol.t_events[0][0]),
            times=sol.t,
            values=sol.y[0],
        )
    times, values = sol.t, sol.y[0]
    target = (-a / b) ** (1 / (p - 1)) if a > 0 and b < 0 else None
    tail = values[len(values) // 2 :]
    if target is not None and abs(values[-1] - target) < 0.1 * target and abs(tail[-1] - target) <= abs(tail[0] - target):
        kind = "to-equilibrium"
    elif values[-1] < values[0] and np.all(np.diff(tail) <= 0):
        kind = "decay"
    else:
        kind = "bounded"
    return ComparisonResult(times, values, kind, target)


@dataclass
class RateFit:
    value: float  # rate c (exponential) or exponent q (power law)
    window: tuple[float, float]
    residual: float
    low_confidence: bool = False
    kind: str = "exponential"

    def as_dict(self):
        return asdict(self)


def fit_exponential_rate(times, values, target: float) -> RateFit:
    """Fit ``|value - target| ~ A e^{-c t}`` on the final half of the series."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    half = len(t) // 2
    t, dist = t[half:], np.abs(v[half:] - target)
    if len(t) < 3 or np.any(dist <= 0) or not dist[-1] < dist[0]:
        raise NonConvergent("distance to target is not decreasing over the fit window")
    y = np.log(dist)
    coef, res, *_ = np.polyfit(t, y, 1, full=True)
    c = -float(coef[0])
    if c <= 0:
        raise NonConvergent("fitted exponential rate is not positive")
    rms = math.sqrt(float(res[0]) / len(t)) if len(res) else 0.0
    span = c * (t[-1] - t[0])
    return RateFit(c, (float(t[0]), float(t[-1])), rms, bool(span < 3), "exponential")


def fit_power_exponent(times, values, direction: str = "forward") -> RateFit:
    """Log-log slope of a positive decreasing series over its final decade.

    ``direction="backward"`` fits against ``-t`` for series recorded at
    negative times approaching ``-inf``.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if direction == "backward":
        t = -t
    keep = t > 0
    t, v = t[keep], v[keep]
    if len(t) < 3 or np.any(v <= 0):
        raise NonConvergent("power fit needs positive values at positive times")
    order = np.argsort(t)
    t, v = t[order], v[order]
    window = t >= t[-1] / 10
    t, v = t[window], v[window]
    if len(t) < 3:
        raise NonConvergent("final decade holds fewer than 3 samples")
    if not v[-1] < v[0] * (1 - 1e-9):
        raise NonConvergent("series is not decreasing over the final decade")
    x, y = np.log(t), np.log(v)
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = math.sqrt(float(res[0]) / len(t)) if len(res) else 0.0
    return RateFit(float(coef[0]), (float(t[0]), float(t[-1])), rms, bool(t[-1] / t[0] < 9.5), "power")


# ---------------------------------------------------------------------------
# Liouville suite


@dataclass
class Check:
    name: str
    passed: bool
    statistic: float
    tolerance: float
    detail: str = ""
    location: Optional[dict] = None

    def as_dict(self):
        d = {
            "name": self.name,
            "pass": bool(self.passed),
            "statistic": float(self.statistic),
            "tolerance": float(self.tolerance),
        }
        if self.detail:
            d["detail"] = self.detail
        if self.location is not None:
            d["location"] = self.location
        return d


@dataclass
class SuiteReport:
    checks: list[Check]
    fitted_rates: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self):
        return {
            "checks": [c.as_dict() for c in self.checks],
            "fitted_rates": self.fitted_rates,
            "pass": self.passed,
        }

    def raise_for_failure(self):
        bad = [c for c in self.checks if not c.passed]
        if bad:
            lines = [f"{c.name}: statistic {c.statistic:.4g} vs tolerance {c.tolerance:.4g} {c.location or ''}" for c in bad]
            raise SuiteFailure("; ".join(lines), report=self)


def series_table(trajectory: Trajectory) -> dict:
    """Per-record ``sup u``, ``inf u`` and ``||u - u*||_inf``."""
    F = trajectory.fields.reshape(len(trajectory.times), -1)
    ustar = trajectory.params.equilibrium
    sup_u = F.max(axis=1)
    inf_u = F.min(axis=1)
    dist = np.abs(F - ustar).max(axis=1) if ustar is not None else np.full(len(F), np.nan)
    return {"t": trajectory.times.copy(), "sup_u": sup_u, "inf_u": inf_u, "dist_to_ustar": dist}


def _location(trajectory, k, flat_index):
    coords = [float(np.ravel(c)[flat_index]) for c in trajectory.model.coords]
    return {"t": float(trajectory.times[k]), "node": int(flat_index), "coords": coords}


def check_liouville_suite(
    trajectory: Trajectory,
    params: Optional[EquationParams] = None,
    hp=None,
    C: Optional[float] = None,
    rate_tolerance: float = 0.1,
    exponent_tolerance: float = 0.1,
    trap_slack: Optional[float] = None,
    strict: bool = False,
) -> SuiteReport:
    """Forward-time checks of the Liouville-type conclusions.

    (i) trapping below ``u*`` for data started at or below it (or descent to
    ``u* + 1e-3`` for data started above); (ii) exponential convergence to
    ``u*`` at a rate within ``rate_tolerance`` of ``(p-1) a``; (iii) for
    ``a = 0`` a power-law decay exponent within ``exponent_tolerance`` of
    ``-1/(p-1)``; (iv) ``u_t/u >= delta |a + b u^(p-1)| - C/t`` (no absolute value
    outside the DG regimes) at recorded
    points, with ``C`` the run's fitted Harnack constant.  ``hp`` enables
    (iv); when ``C`` is omitted it is fitted from the same run.
    """
    params = params or trajectory.params
    model = trajectory.model
    checks: list[Check] = []
    rates: dict = {}
    ustar = params.equilibrium
    table = series_table(trajectory)
    h2 = model.h**2
    slack = 10 * h2 if trap_slack is None else trap_slack

    if ustar is not None:
        u0_max = float(np.max(trajectory.fields[0]))
        if u0_max <= ustar * (1 + 1e-12):
            excess = table["sup_u"] - ustar
            k = int(np.argmax(excess))
            idx = int(np.argmax(trajectory.fields[k]))
            checks.append(
                Check("trapping", bool(excess[k] <= slack), float(excess[k]), slack, "sup u - u*", _location(trajectory, k, idx))
            )
        else:
            final_excess = float(table["sup_u"][-1] - ustar)
            checks.append(Check("descent_below_ustar", final_excess <= 1e-3, final_excess, 1e-3, "sup u(T) - u*"))

        dist = table["dist_to_ustar"]
        expected = (params.p - 1) * params.a
        if np.max(dist) <= 1e-12:
            checks.append(Check("convergence", True, 0.0, 1e-12, "trajectory sits at u*"))
        else:
            try:
                fit = fit_exponential_rate(table["t"], dist, 0.0)
                rates["exponential"] = fit.as_dict()
                rel = abs(fit.value - expected) / expected
                checks.append(Check("convergence_rate", rel <= rate_tolerance, fit.value, expected * rate_tolerance, f"expected {expected:g}"))
            except NonConvergent as exc:
                checks.append(Check("convergence_rate", False, float("nan"), expected * rate_tolerance, str(exc)))

    if params.a == 0 and params.b < 0:
        expected = -1.0 / (params.p - 1.0)
        try:
            fit = fit_power_exponent(table["t"], table["sup_u"])
            rates["power"] = fit.as_dict()
            rel = abs(fit.value - expected) / abs(expected)
            checks.append(Check("decay_exponent", rel <= exponent_tolerance, fit.value, abs(expected) * exponent_tolerance, f"expected {expected:g}"))
        except NonConvergent as exc:
            checks.append(Check("decay_exponent", False, float("nan"), exponent_tolerance, str(exc)))

    if hp is not None:
        from harnack_lab.harnack import harnack_quantity

        times = trajectory.times
        if C is None:
            C = 0.0
            for t, u in zip(times, trajectory.fields):
                if t > 0:
                    C = max(C, float(np.max(t * harnack_quantity(model, u, params, hp))))
        worst, where = math.inf, None
        for k, (t, u) in enumerate(zip(times, trajectory.fields)):
            if t == 0:
                continue
            ft = trajectory.rates(k) / u
            w = params.a + params.b * u ** (params.p - 1.0)
            if hp.absolute:
                w = np.abs(w)
            margin = ft - hp.delta * w + C / t
            i = int(np.argmin(margin))
            if margin.flat[i] < worst:
                worst, where = float(margin.flat[i]), _location(trajectory, k, i)
        tol = 1e-9 * (1 + C / max(times[1], 1e-300)) if len(times) > 1 else 1e-9
        checks.append(Check("forward_inequality", bool(worst >= -tol), worst, float(tol), f"C={C:g}", where))
        rates["C"] = C

    report = SuiteReport(checks, rates)
    if strict:
        report.raise_for_failure()
    return report
