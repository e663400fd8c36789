"""Method-of-lines integration of u_t = Delta_V u + a u + b u^p.

Time stepping is classical explicit RK4 with a CFL-limited step; the elliptic
problem is solved by marching the same system in pseudo-time until the
residual is small.  The time derivative used downstream (Harnack quantities,
differential inequality checks) is always ``rhs(u)``, never a difference of
stored fields.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from harnack_lab.errors import (
    DomainError,
    NoConvergence,
    NonPositiveField,
    PositivityLost,
    StabilityViolation,
)
from harnack_lab.geometry import (
    COORDINATE_NAMES,
    FieldLike,
    ManifoldModel,
    ModelKind,
    ScalarField,
    _values,
    drift_laplacian,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EquationParams:
    """Coefficients of ``u_t = Delta_V u + a u + b u^p``."""

    a: float
    b: float
    p: float

    def __post_init__(self):
        for name in ("a", "b", "p"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v}")
        if self.a < 0:
            raise DomainError(f"a >= 0 required, got a={self.a}")
        if self.b > 0:
            raise DomainError(f"b <= 0 required, got b={self.b}")
        if not self.p > 1:
            raise DomainError(f"p > 1 required, got p={self.p}")

    @property
    def equilibrium(self) -> Optional[float]:
        """Positive constant steady state ``(-a/b)^(1/(p-1))`` if it exists."""
        if self.a > 0 and self.b < 0:
            return (-self.a / self.b) ** (1.0 / (self.p - 1.0))
        return None

    def reaction(self, u):
        return self.a * u + self.b * np.power(u, self.p)

    def reaction_derivative(self, u):
        return self.a + self.b * self.p * np.power(u, self.p - 1.0)

    def scaled(self, lam: float) -> "EquationParams":
        """Parameters solved by ``lam * u`` whenever ``u`` solves ``self``."""
        return replace(self, b=self.b * lam ** (1.0 - self.p))

    def as_dict(self):
        return {"a": self.a, "b": self.b, "p": self.p}


@dataclass(frozen=True)
class SolveConfig:
    T: float = 20.0
    dt: Optional[float] = None
    cfl: float = 0.5
    record_every: Optional[int] = None
    positivity_floor: float = 1e-12
    elliptic_tol: float = 1e-9
    max_iter: int = 2_000_000
    max_records: int = 400

    def __post_init__(self):
        if not self.T >= 0:
            raise DomainError(f"final time must be >= 0, got {self.T}")
        if not 0 < self.cfl <= 1:
            raise DomainError(f"cfl must lie in (0, 1], got {self.cfl}")
        if not self.positivity_floor > 0:
            raise DomainError("positivity floor must be > 0")
        if self.dt is not None and not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.record_every is not None and self.record_every < 1:
            raise DomainError("record_every must be >= 1")

    def max_stable_dt(self, model: ManifoldModel) -> float:
        return self.cfl * model.h**2 / (2 * model.n)

    def time_step(self, model: ManifoldModel, T: Optional[float] = None) -> tuple[float, int]:
        """Return ``(dt, nsteps)`` covering ``[0, T]``."""
        T = self.T if T is None else T
        limit = self.max_stable_dt(model)
        if self.dt is not None:
            if self.dt > model.h**2 / (2 * model.n) * (1 + 1e-12):
                raise StabilityViolation(
                    f"dt={self.dt:g} exceeds the explicit limit h^2/(2n)={model.h**2 / (2 * model.n):g}"
                )
            dt = self.dt
            nsteps = int(math.ceil(T / dt - 1e-9)) if T > 0 else 0
            return dt, nsteps
        if T == 0:
            return limit, 0
        nsteps = int(math.ceil(T / limit))
        return T / nsteps, nsteps


def rhs(model: ManifoldModel, field: FieldLike, params: EquationParams) -> np.ndarray:
    """``Delta_V u + a u + b u^p``; the canonical value of ``u_t``."""
    u = _values(model, field)
    if np.any(u <= 0):
        raise NonPositiveField("rhs requires a strictly positive field")
    return drift_laplacian(model, u) + params.reaction(u)


def _power(u, p):
    # integer exponents by multiplication: several times faster than pow
    if p == 2.0:
        return u * u
    if p == 3.0:
        return u * u * u
    return u**p


def _rhs_unchecked(model, u, params):
    out = drift_laplacian(model, u)
    if params.a:
        out += params.a * u
    if params.b:
        out += params.b * _power(u, params.p)
    return out


def rhs_time_derivative(model: ManifoldModel, u: np.ndarray, ut: np.ndarray, params: EquationParams):
    """``d/dt rhs(u)`` along the flow: the Jacobian of the semidiscrete system applied to ``u_t``."""
    return drift_laplacian(model, ut) + params.reaction_derivative(u) * ut


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states of a parabolic run; immutable once built."""

    model: ManifoldModel
    params: EquationParams
    times: np.ndarray
    fields: np.ndarray
    dt: float
    config: SolveConfig
    nsteps: int = 0

    def __post_init__(self):
        self.times.setflags(write=False)
        self.fields.setflags(write=False)

    def __len__(self):
        return len(self.times)

    def field(self, i: int) -> ScalarField:
        return ScalarField(self.fields[i], positive=True)

    @property
    def final(self) -> np.ndarray:
        return self.fields[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    def rates(self, i: Optional[int] = None) -> np.ndarray:
        """``u_t`` at record ``i`` (all records if ``None``), from ``rhs``."""
        if i is not None:
            return rhs(self.model, self.fields[i], self.params)
        return np.stack([rhs(self.model, u, self.params) for u in self.fields])

    def metadata(self) -> dict:
        return {
            "model": self.model.describe(),
            "params": self.params.as_dict(),
            "dt": self.dt,
            "nsteps": self.nsteps,
            "resolution": self.model.resolution,
            "records": len(self.times),
            "final_time": self.final_time,
            "integrator": "rk4",
        }

    def to_csv(self, path, sidecar: bool = True) -> list[Path]:
        """Write ``t, node_index, coordinate(s), u, u_t`` rows plus a JSON sidecar."""
        path = Path(path)
        names = list(COORDINATE_NAMES[self.model.kind])
        coords = [np.ravel(c) for c in self.model.coords]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "node_index", *names, "u", "u_t"])
            for t, u in zip(self.times, self.fields):
                ut = rhs(self.model, u, self.params).ravel()
                uf = u.ravel()
                for k in range(uf.size):
                    w.writerow(
                        [repr(float(t)), k, *(repr(float(c[k])) for c in coords), repr(float(uf[k])), repr(float(ut[k]))]
                    )
        written = [path]
        if sidecar:
            meta = path.with_suffix(".json")
            meta.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
            written.append(meta)
        return written


Forcing = Callable[[float], np.ndarray]


def _rk4_step(model, u, t, dt, params, forcing):
    if forcing is None:
        k1 = _rhs_unchecked(model, u, params)
        k2 = _rhs_unchecked(model, u + 0.5 * dt * k1, params)
        k3 = _rhs_unchecked(model, u + 0.5 * dt * k2, params)
        k4 = _rhs_unchecked(model, u + dt * k3, params)
    else:
        k1 = _rhs_unchecked(model, u, params) + forcing(t)
        k2 = _rhs_unchecked(model, u + 0.5 * dt * k1, params) + forcing(t + 0.5 * dt)
        k3 = _rhs_unchecked(model, u + 0.5 * dt * k2, params) + forcing(t + 0.5 * dt)
        k4 = _rhs_unchecked(model, u + dt * k3, params) + forcing(t + dt)
    return u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _guard(u, t, floor):
    lo = float(np.min(u))
    if not np.all(np.isfinite(u)):
        raise StabilityViolation(f"non-finite values at t={t:g}")
    if lo < floor:
        raise PositivityLost(
            f"solution minimum {lo:.3e} fell below floor {floor:g} at t={t:g}", time=t, minimum=lo
        )


def solve_parabolic(
    model: ManifoldModel,
    initial: FieldLike,
    params: EquationParams,
    config: SolveConfig = SolveConfig(),
    forcing: Optional[Forcing] = None,
) -> Trajectory:
    """Integrate from ``initial`` at t=0 to ``config.T`` with RK4.

    Raises ``PositivityLost`` when the field dips below the positivity floor
    and ``StabilityViolation`` on NaN/Inf or an over-long time step.
    """
    u = np.array(_values(model, initial), dtype=float)
    if np.any(u <= 0):
        raise NonPositiveField("initial data must be strictly positive")
    dt, nsteps = config.time_step(model)
    stride = config.record_every or max(1, -(-nsteps // config.max_records))

    times = [0.0]
    fields = [u.copy()]
    t = 0.0
    for k in range(1, nsteps + 1):
        step = dt
        if config.dt is not None and k == nsteps:
            step = config.T - (nsteps - 1) * dt  # partial last step
            if abs(step - dt) <= 1e-9 * dt:
                step = dt
        u = _rk4_step(model, u, t, step, params, forcing)
        t = (k - 1) * dt + step if k == nsteps else k * dt
        _guard(u, t, config.positivity_floor)
        if k % stride == 0 or k == nsteps:
            times.append(t)
            fields.append(u.copy())
    return Trajectory(
        model=model,
        params=params,
        times=np.asarray(times),
        fields=np.asarray(fields),
        dt=dt,
        config=config,
        nsteps=nsteps,
    )


def solve_elliptic(
    model: ManifoldModel,
    params: EquationParams,
    config: SolveConfig = SolveConfig(),
    initial_guess: FieldLike = 1.0,
    check_every: int = 50,
) -> ScalarField:
    """Steady state of ``rhs = 0`` by pseudo-time RK4 marching.

    Stops once ``max|rhs| < config.elliptic_tol``; raises ``NoConvergence``
    when ``config.max_iter`` steps are exhausted.
    """
    u = np.array(_values(model, initial_guess), dtype=float)
    if np.any(u <= 0):
        raise NonPositiveField("initial guess must be strictly positive")
    dt = config.max_stable_dt(model) if config.dt is None else config.time_step(model, T=1.0)[0]
    for it in range(config.max_iter + 1):
        if it % check_every == 0:
            res = float(np.max(np.abs(_rhs_unchecked(model, u, params))))
            if res < config.elliptic_tol:
                log.debug("elliptic solve converged after %d steps (residual %.2e)", it, res)
                return ScalarField(u, positive=True)
        if it == config.max_iter:
            break
        u = _rk4_step(model, u, it * dt, dt, params, None)
        _guard(u, it * dt, config.positivity_floor)
    raise NoConvergence(
        f"residual {res:.3e} above tolerance {config.elliptic_tol:g} after {config.max_iter} steps"
    )


# ---------------------------------------------------------------------------
# manufactured solutions


def manufactured_problem(model: ManifoldModel, params: EquationParams, expression: str):
    """Exact field and forcing for a prescribed space-time expression.

    ``expression`` is a sympy string in the model coordinates and ``t``.  The
    returned forcing ``g`` makes the expression an exact solution of
    ``u_t = Delta_V u + a u + b u^p + g``.  Both callables take
    ``(model, t)`` so they can be reused across a resolution ladder.
    """
    names = COORDINATE_NAMES[model.kind]
    syms = sp.symbols(names, real=True)
    t = sp.Symbol("t", real=True)
    local = dict(zip(names, syms), t=t, pi=sp.pi)
    u = sp.sympify(expression, locals=local)
    if model.kind is ModelKind.SPHERE:
        (th,) = syms
        r = sp.Float(model.size)
        lap = (sp.diff(sp.sin(th) * sp.diff(u, th), th) / sp.sin(th)) / r**2
        drift_term = 0
    else:
        lap = sum(sp.diff(u, s, 2) for s in syms)
        V = [sp.sympify(e, locals=local) for e in model.drift_spec]
        drift_term = sum(v * sp.diff(u, s) for v, s in zip(V, syms))
    g = sp.diff(u, t) - lap - drift_term - params.a * u - params.b * u ** sp.Float(params.p)
    u_fn = sp.lambdify((*syms, t), u, "numpy")
    g_fn = sp.lambdify((*syms, t), sp.simplify(g), "numpy")

    def exact(m: ManifoldModel, time: float) -> np.ndarray:
        return np.broadcast_to(np.asarray(u_fn(*m.coords, time), dtype=float), m.shape).copy()

    def forcing(m: ManifoldModel, time: float) -> np.ndarray:
        return np.broadcast_to(np.asarray(g_fn(*m.coords, time), dtype=float), m.shape).copy()

    return exact, forcing


@dataclass
class ConvergenceReport:
    resolutions: list[int]
    spacings: list[float]
    errors: list[float]
    order: float
    pairwise_orders: list[float] = field(default_factory=list)

    def as_dict(self):
        return {
            "resolutions": self.resolutions,
            "spacings": self.spacings,
            "errors": self.errors,
            "order": self.order,
            "pairwise_orders": self.pairwise_orders,
        }


def fit_order(spacings: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(h)."""
    h = np.log(np.asarray(spacings, dtype=float))
    e = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(h, e, 1)[0])


def manufactured_residual(
    model: ManifoldModel,
    params: EquationParams,
    exact_field_fn,
    forcing,
    resolutions: Sequence[int] = (16, 32, 64),
    T: float = 1.0,
    cfl: float = 0.5,
) -> ConvergenceReport:
    """Max-norm error at ``T`` of the forced problem across a resolution ladder.

    ``exact_field_fn(model, t)`` and ``forcing(model, t)`` are evaluated on
    each rung's grid; ``forcing=None`` means no source term.
    """
    errors, spacings = [], []
    for N in resolutions:
        m = model.with_resolution(N)
        g = None if forcing is None else (lambda tt, m=m: forcing(m, tt))
        traj = solve_parabolic(m, exact_field_fn(m, 0.0), params, SolveConfig(T=T, cfl=cfl), forcing=g)
        err = float(np.max(np.abs(traj.final - exact_field_fn(m, T))))
        errors.append(err)
        spacings.append(m.h)
    positive = [e for e in errors if e > 0]
    if len(positive) == len(errors) and len(errors) >= 2:
        order = fit_order(spacings, errors)
        pair = [
            float(math.log(errors[i] / errors[i + 1]) / math.log(spacings[i] / spacings[i + 1]))
            for i in range(len(errors) - 1)
        ]
    else:
        order, pair = float("nan"), []
    return ConvergenceReport(list(resolutions), spacings, errors, order, pair)
