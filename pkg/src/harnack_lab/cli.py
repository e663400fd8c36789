"""Declarative experiment runner.

Experiments are described by flat ``key = value`` documents (``#`` starts a
comment).  ``harnack-lab <experiment> --config FILE`` or ``--preset NAME``
runs one and writes CSV tables plus a ``report.json`` into the output
directory.  Exit codes: 0 when every check passes, 1 when a check fails,
2 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from harnack_lab.asymptotics import check_liouville_suite, series_table
from harnack_lab.errors import (
    HarnackLabError,
    Infeasible,
    ParseError,
    ValidationError,
)
from harnack_lab.geometry import (
    COORDINATE_NAMES,
    DIMENSION,
    ManifoldModel,
    ModelKind,
    build_model,
    curvature_lower_bound,
)
from harnack_lab.harnack import (
    Regime,
    constraint_margins_dl,
    cutoff_phi,
    cutoff_verify,
    dg1_best_point,
    elliptic_estimate_check,
    feasibility_search,
    l_threshold,
    lemma_kl_terms,
    HarnackParams,
    margins_for,
    sample_L_condition,
    verify_harnack,
)
from harnack_lab.solver import (
    EquationParams,
    SolveConfig,
    fit_order,
    rhs,
    solve_elliptic,
    solve_parabolic,
)

EXPERIMENTS = (
    "simulate",
    "feasibility",
    "verify-harnack",
    "elliptic",
    "asymptotics",
    "lemma-check",
    "cutoff-check",
    "sweep",
)
INITIAL_KINDS = ("constant", "sinusoid", "file")
DEFAULT_RESOLUTION = {ModelKind.CIRCLE: 256, ModelKind.TORUS: 96, ModelKind.SPHERE: 128}
DEFAULT_SIZE = {ModelKind.CIRCLE: 2 * math.pi, ModelKind.TORUS: 2 * math.pi, ModelKind.SPHERE: 1.0}
EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
THREADS_ENV = "HARNACK_LAB_THREADS"

_AUTO = "auto"


@dataclass
class ExperimentConfig:
    experiment: str
    model: ModelKind = ModelKind.TORUS
    size: float = 2 * math.pi
    resolution: int = 96
    drift: str = "0"
    a: float = 1.0
    b: float = -1.0
    p: float = 2.0
    m: float = 3.0
    K: float = 0.0
    K_auto: float = 0.0
    regime: Regime = Regime.DL
    gamma: Optional[float] = None
    delta: Optional[float] = None
    integrator: str = "rk4"
    T: float = 20.0
    dt: Optional[float] = None
    cfl: float = 0.5
    record_every: Optional[int] = None
    max_records: int = 400
    positivity_floor: float = 1e-12
    elliptic_tol: float = 1e-9
    max_iter: int = 2_000_000
    initial: str = "sinusoid"
    initial_value: float = 0.5
    amplitude: float = 0.2
    mode: int = 1
    initial_file: Optional[str] = None
    ensemble: int = 1
    seed: int = 0
    R: float = math.inf
    x0: Optional[str] = None
    sweep_points: int = 11
    sweep_max: float = 1.2
    workers: int = 1
    levels: int = 3
    rate_tolerance: float = 0.1
    exponent_tolerance: float = 0.1
    out: str = "harnack_out"
    warnings: list = field(default_factory=list)

    def echo(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (ModelKind, Regime)):
                v = v.value
            elif isinstance(v, float) and math.isinf(v):
                v = "inf"
            d[f.name] = v
        return d

    def build_model(self, resolution: Optional[int] = None) -> ManifoldModel:
        return build_model(self.model, self.size, resolution or self.resolution, self.drift)

    def equation(self) -> EquationParams:
        return EquationParams(self.a, self.b, self.p)

    def solve_config(self, T: Optional[float] = None) -> SolveConfig:
        return SolveConfig(
            T=self.T if T is None else T,
            dt=self.dt,
            cfl=self.cfl,
            record_every=self.record_every,
            positivity_floor=self.positivity_floor,
            elliptic_tol=self.elliptic_tol,
            max_iter=self.max_iter,
            max_records=self.max_records,
        )


@dataclass
class RunReport:
    experiment: str
    config: dict
    checks: list
    fitted: dict
    outputs: list
    wall_time: float
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c["pass"] for c in self.checks)

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return EXIT_ERROR
        return EXIT_PASS if self.passed else EXIT_FAIL

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        d["exit_code"] = self.exit_code
        return d


# ---------------------------------------------------------------------------
# parsing


def _as_float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _as_int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text}")
    return int(v)


def _optional(conv):
    def inner(text):
        return None if text.lower() == _AUTO else conv(text)

    return inner


def _choice(options):
    def inner(text):
        t = text.lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t

    return inner


def _radius(text):
    t = text.lower()
    if t in ("inf", "auto"):
        return None if t == "auto" else math.inf
    return _as_float(text)


_CONVERTERS = {
    "experiment": _choice(EXPERIMENTS),
    "model": ModelKind.parse,
    "size": _optional(_as_float),
    "resolution": _optional(_as_int),
    "drift": str,
    "a": _as_float,
    "b": _as_float,
    "p": _as_float,
    "m": _optional(_as_float),
    "K": _optional(_as_float),
    "regime": _optional(Regime.parse),
    "gamma": _optional(_as_float),
    "delta": _optional(_as_float),
    "integrator": _choice(("rk4",)),
    "T": _as_float,
    "dt": _optional(_as_float),
    "cfl": _as_float,
    "record_every": _optional(_as_int),
    "max_records": _as_int,
    "positivity_floor": _as_float,
    "elliptic_tol": _as_float,
    "max_iter": _as_int,
    "initial": _choice(INITIAL_KINDS),
    "initial_value": _optional(_as_float),
    "amplitude": _as_float,
    "mode": _as_int,
    "initial_file": str,
    "ensemble": _as_int,
    "seed": _as_int,
    "R": _radius,
    "x0": _optional(str),
    "sweep_points": _as_int,
    "sweep_max": _as_float,
    "workers": _as_int,
    "levels": _as_int,
    "rate_tolerance": _as_float,
    "exponent_tolerance": _as_float,
    "out": str,
}


def _read_source(source) -> tuple[str, Optional[Path]]:
    if isinstance(source, Path):
        if not source.is_file():
            raise ValidationError(f"config file {source} does not exist")
        return source.read_text(), source.parent
    text = str(source)
    if "\n" not in text and "=" not in text:
        path = Path(text)
        if not path.is_file():
            raise ValidationError(f"config file {path} does not exist")
        return path.read_text(), path.parent
    return text, None


def parse_document(text: str) -> dict:
    """Split a ``key = value`` document into ``{key: (value, line)}``."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"expected 'key = value', got {body!r}", line=lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ParseError("empty key", line=lineno)
        if key not in _CONVERTERS:
            raise ParseError(f"unknown key (known: {', '.join(sorted(_CONVERTERS))})", line=lineno, key=key)
        if key in raw:
            raise ParseError(f"duplicate key (first set on line {raw[key][1]})", line=lineno, key=key)
        if value == "":
            raise ParseError("missing value", line=lineno, key=key)
        raw[key] = (value, lineno)
    return raw


def parse_config(source, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse and validate an experiment document (a path or inline text).

    ``overrides`` maps keys to values applied after parsing, as if they had
    been written in the document.  All ``auto`` values are resolved.
    """
    text, base = _read_source(source)
    raw = parse_document(text)
    values = {}
    for key, (value, lineno) in raw.items():
        try:
            values[key] = _CONVERTERS[key](value)
        except (ValueError, TypeError) as exc:
            raise ParseError(str(exc), line=lineno, key=key) from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _CONVERTERS:
            raise ParseError("unknown override key", key=key)
        values[key] = _CONVERTERS[key](str(value)) if isinstance(value, str) else value
    if "experiment" not in values:
        raise ParseError("missing required key", key="experiment")
    return _resolve(values, base)


def _resolve(v: dict, base: Optional[Path]) -> ExperimentConfig:
    kind = v.get("model", ModelKind.TORUS)
    n = DIMENSION[kind]
    a, b, p = v.get("a", 1.0), v.get("b", -1.0), v.get("p", 2.0)
    if not p > 1:
        raise ValidationError(f"p > 1 required (hypotheses a >= 0, b <= 0 and p > 1); got p={p}")
    if b > 0:
        raise ValidationError(f"b <= 0 required (hypotheses a >= 0, b <= 0 and p > 1); got b={b}")
    if a < 0:
        raise ValidationError(f"a >= 0 required (hypotheses a >= 0, b <= 0 and p > 1); got a={a}")
    m = v.get("m") or float(n + 1)
    if not m > n:
        raise ValidationError(f"m must exceed the model dimension n={n}; got m={m}")

    size = v.get("size") or DEFAULT_SIZE[kind]
    resolution = v.get("resolution") or DEFAULT_RESOLUTION[kind]
    drift = v.get("drift", "0")
    try:
        model = build_model(kind, size, resolution, drift)
    except HarnackLabError as exc:
        raise ValidationError(f"model: {exc}") from None
    K_auto = curvature_lower_bound(model, m).K
    notes = []
    K = v.get("K")
    if K is None:
        K = K_auto
    else:
        if K < 0:
            raise ValidationError(f"K must be >= 0; got {K}")
        if K < K_auto * (1 - 1e-9) - 1e-12:
            raise ValidationError(
                f"K={K:g} is below the model's curvature bound {K_auto:g}; Ric_V^m >= -K g would fail"
            )
        if K > K_auto + 1e-12:
            msg = f"K={K:g} overrides the model bound {K_auto:g} (weaker hypothesis than the model provides)"
            warnings.warn(msg, stacklevel=3)
            notes.append(msg)

    regime = v.get("regime") or (Regime.DL if a > 0 else Regime.DL0)
    _check_regime(regime, m, p, a, K)

    initial = v.get("initial", "sinusoid")
    ustar = (-a / b) ** (1 / (p - 1)) if a > 0 and b < 0 else None
    initial_value = v.get("initial_value")
    if initial_value is None:
        initial_value = 0.5 * ustar if ustar is not None else 0.5
    amplitude = v.get("amplitude", 0.2 * initial_value)
    if initial_value <= 0:
        raise ValidationError(f"initial_value must be positive; got {initial_value}")
    if initial == "sinusoid" and not abs(amplitude) < initial_value:
        raise ValidationError(
            f"amplitude {amplitude:g} must stay below initial_value {initial_value:g} to keep the data positive"
        )
    initial_file = v.get("initial_file")
    if initial == "file":
        if not initial_file:
            raise ValidationError("initial = file needs initial_file")
        path = Path(initial_file)
        if not path.is_absolute() and base is not None:
            path = base / path
        if not path.is_file():
            raise ValidationError(f"initial_file {path} does not exist")
        initial_file = str(path)

    ints = {k: v.get(k, d) for k, d in (("ensemble", 1), ("sweep_points", 11), ("workers", 1), ("levels", 3), ("mode", 1))}
    for k, val in ints.items():
        if val < 1:
            raise ValidationError(f"{k} must be >= 1; got {val}")
    if v.get("T", 20.0) <= 0:
        raise ValidationError("T must be positive")
    if not 0 < v.get("cfl", 0.5) <= 1:
        raise ValidationError("cfl must lie in (0, 1]")
    R = v.get("R", math.inf)
    if R is not None and not R > 0:
        raise ValidationError("R must be positive")

    kw = {k: val for k, val in v.items() if k in {f.name for f in fields(ExperimentConfig)}}
    kw.update(
        model=kind,
        size=float(size),
        resolution=int(resolution),
        drift=drift,
        m=float(m),
        K=float(K),
        K_auto=float(K_auto),
        regime=regime,
        initial=initial,
        initial_value=float(initial_value),
        amplitude=float(amplitude),
        initial_file=initial_file,
        warnings=notes,
    )
    if R is None:
        # auto: a radius whose 3R/2 ball fits inside the model
        R = model.injectivity_scale / 4 if v["experiment"] in ("cutoff-check", "elliptic") else math.inf
    kw["R"] = R
    return ExperimentConfig(**kw)


def _check_regime(regime: Regime, m, p, a, K):
    if regime is Regime.DL and not a > 0:
        raise ValidationError("regime DL requires a > 0 (use DL0 when a = 0)")
    if regime is Regime.DL0 and (a != 0 or K != 0):
        raise ValidationError("regime DL0 requires a = 0 and K = 0")
    if regime is Regime.DG1:
        if not a > 0:
            raise ValidationError("regime DG1 requires a > 0")
        if not p > 1 + 2 / m:
            raise ValidationError(f"regime DG1 requires p > 1 + 2/m = {1 + 2 / m:g}; got p={p}")
        L = l_threshold(m, p, a)
        if not K < L:
            raise ValidationError(f"regime DG1 requires K in [0, L(m,p,a)) = [0, {L:g}); got K={K:g}")
    if regime is Regime.DG2:
        if K != 0 or not a > 0:
            raise ValidationError("regime DG2 requires K = 0 and a > 0")
        if not max(4 / m, 1) < p <= 1 + 2 / m:
            raise ValidationError(f"regime DG2 requires max(4/m, 1) < p <= 1 + 2/m; got p={p}")


# ---------------------------------------------------------------------------
# initial data


def _base_profile(model: ManifoldModel, mode: int, phases) -> np.ndarray:
    k = 2 * math.pi * mode / model.size
    if model.kind is ModelKind.CIRCLE:
        return np.sin(k * model.coords[0] + phases[0])
    if model.kind is ModelKind.TORUS:
        x, y = model.coords
        return np.sin(k * x + phases[0]) * np.cos(k * y + phases[1])
    # axisymmetric: cos(mode theta) is even about both poles
    return np.cos(mode * model.coords[0])


def _load_initial(model: ManifoldModel, path: str) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", ndmin=1, comments="#")
    if data.size != int(np.prod(model.shape)):
        raise ValidationError(f"initial_file has {data.size} values; the model has {int(np.prod(model.shape))} nodes")
    u = data.reshape(model.shape)
    if not np.all(u > 0):
        raise ValidationError("initial_file must contain strictly positive values")
    return u


def initial_data(cfg: ExperimentConfig, model: ManifoldModel, member: Optional[int] = None) -> np.ndarray:
    """Initial field; ``member`` selects a randomised ensemble draw.

    Ensemble members are ``base * (1 + r * profile)`` with the base in
    ``[0.5, 1.5] * initial_value``, relative amplitude ``r`` in ``[0.5, 0.9]``,
    mode in ``[mode, 2 mode]`` and random phases, drawn from a generator
    seeded by ``(seed, member)``.  Large relative amplitudes at moderate
    frequency are the data for which ``sup t F`` is close to saturation.
    """
    if cfg.initial == "constant":
        return model.constant(cfg.initial_value)
    if cfg.initial == "file":
        return _load_initial(model, cfg.initial_file)
    if member is None:
        return cfg.initial_value + cfg.amplitude * _base_profile(model, cfg.mode, (0.0, 0.0))
    rng = np.random.default_rng([cfg.seed, member])
    base = cfg.initial_value * rng.uniform(0.5, 1.5)
    ratio = rng.uniform(0.5, 0.9)
    mode = int(rng.integers(cfg.mode, 2 * cfg.mode + 1))
    phases = rng.uniform(0, 2 * math.pi, size=2)
    return base * (1 + ratio * _base_profile(model, mode, phases))


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class _Outputs:
    def __init__(self, directory: Path):
        self.dir = directory
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def csv(self, name: str, header, rows):
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        self.files.append(name)
        return path

    def json(self, name: str, payload):
        path = self.dir / name
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
        self.files.append(name)
        return path

    def add(self, paths):
        for p in paths:
            self.files.append(Path(p).name)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (ModelKind, Regime)):
        return x.value
    return x


def _check(name, passed, statistic=None, tolerance=None, detail=""):
    statistic = float(bool(passed)) if statistic is None else statistic
    tolerance = 1.0 if tolerance is None else tolerance
    return {
        "name": name,
        "pass": bool(passed),
        "statistic": float(statistic),
        "tolerance": float(tolerance),
        "detail": detail,
    }


def _node_rows(model: ManifoldModel, columns: list):
    coords = [np.ravel(c) for c in model.coords]
    cols = [np.ravel(c) for c in columns]
    for i in range(coords[0].size):
        yield [i, *(c[i] for c in coords), *(c[i] for c in cols)]


def _node_header(model: ManifoldModel, names):
    return ["node_index", *COORDINATE_NAMES[model.kind], *names]


# ---------------------------------------------------------------------------
# experiments


def _harnack_params(cfg: ExperimentConfig) -> HarnackParams:
    if cfg.gamma is not None and cfg.delta is not None:
        hp = HarnackParams(cfg.gamma, cfg.delta, cfg.regime)
        return HarnackParams(hp.gamma, hp.delta, hp.regime, margins_for(hp, cfg.m, cfg.p, cfg.a, cfg.K))
    return feasibility_search(cfg.regime, cfg.m, cfg.p, cfg.a, cfg.K)


def _series_rows(traj):
    table = series_table(traj)
    keys = ["t", "sup_u", "inf_u", "dist_to_ustar"]
    return keys, zip(*(table[k] for k in keys))


def _run_simulate(cfg, out: _Outputs):
    model = cfg.build_model()
    traj = solve_parabolic(model, initial_data(cfg, model), cfg.equation(), cfg.solve_config())
    out.add(traj.to_csv(out.dir / "trajectory.csv"))
    keys, rows = _series_rows(traj)
    out.csv("series.csv", keys, rows)
    checks = [
        _check("reached_final_time", abs(traj.final_time - cfg.T) <= 1e-9 * cfg.T, traj.final_time, cfg.T),
        _check("positive", np.min(traj.fields) > 0, float(np.min(traj.fields)), 0.0),
    ]
    return checks, {"final_time": traj.final_time, "dt": traj.dt, "steps": traj.nsteps}


def _run_feasibility(cfg, out: _Outputs):
    fitted = {}
    try:
        hp = _harnack_params(cfg)
    except Infeasible as exc:
        g, d, rep = exc.best
        out.csv("region.csv", _REGION_HEADER, [_region_row(cfg.m, cfg.p, cfg.a, cfg.K, cfg.regime, g, d, rep.margins, False, True)])
        return [_check("feasible", False, rep.min_margin, 0.0, str(exc))], {"gamma": g, "delta": d}
    rep = hp.report
    out.csv("region.csv", _REGION_HEADER, [_region_row(cfg.m, cfg.p, cfg.a, cfg.K, hp.regime, hp.gamma, hp.delta, rep.margins, rep.feasible, True)])
    fitted.update(hp.as_dict())
    checks = [_check("feasible", rep.feasible, rep.min_margin, 0.0, hp.regime.value)]
    if hp.regime is not Regime.ELLIPTIC_DGE:
        b = cfg.b if cfg.b < 0 else -1.0
        deltas = (-hp.delta, hp.delta) if hp.regime is Regime.DG1 else (hp.delta,)
        worst = min(sample_L_condition(cfg.m, cfg.p, cfg.a, hp.gamma, d, b=b, rng=cfg.seed) for d in deltas)
        checks.append(_check("sampled_reaction_condition", worst >= 0, worst, 0.0, "min over 1e4 samples of s"))
        fitted["sampled_min"] = worst
    return checks, fitted


def _run_verify(cfg, out: _Outputs):
    hp = _harnack_params(cfg)
    model = cfg.build_model()
    params = cfg.equation()
    runs, rows = [], []
    for k in range(cfg.ensemble):
        member = k if cfg.ensemble > 1 else None
        traj = solve_parabolic(model, initial_data(cfg, model, member), params, cfg.solve_config())
        rep = verify_harnack(traj, hp, cfg.m, cfg.K, R=cfg.R, x0=cfg.x0)
        runs.append(rep.as_dict())
        rows.extend((k, t, s) for t, s in zip(rep.times, rep.sup_tF_series))
        if k == 0:
            out.add(traj.to_csv(out.dir / "trajectory.csv"))
    out.csv("harnack_series.csv", ["run", "t", "sup_tF"], rows)
    C = np.array([r["C_fit"] for r in runs])
    summary = {
        "regime": hp.regime.value,
        "params": hp.as_dict(),
        "C_fit": float(C.max()),
        "C_fit_runs": C.tolist(),
        "violation_flag": any(r["violation_flag"] for r in runs),
        "runs": runs,
    }
    out.json("verification.json", summary)
    checks = [
        _check("bounded", not summary["violation_flag"] and np.all(np.isfinite(C)), float(C.max()), math.inf),
    ]
    if cfg.ensemble > 1:
        spread = float(C.max() / C.min()) if C.min() > 0 else math.inf
        checks.append(_check("ensemble_spread", spread <= 2.0, spread, 2.0, "max/min C_fit over runs"))
    return checks, {"C_fit": float(C.max()), "gamma": hp.gamma, "delta": hp.delta}


def _run_elliptic(cfg, out: _Outputs):
    model = cfg.build_model()
    params = cfg.equation()
    guess = initial_data(cfg, model)
    sol = solve_elliptic(model, params, cfg.solve_config(), initial_guess=guess)
    u = np.asarray(sol.values)
    res = rhs(model, u, params)
    out.csv("steady.csv", _node_header(model, ["u", "residual"]), _node_rows(model, [u, res]))
    max_res = float(np.max(np.abs(res)))
    checks = [_check("residual", max_res < max(10 * cfg.elliptic_tol, 1e-8), max_res, max(10 * cfg.elliptic_tol, 1e-8))]
    fitted = {"residual": max_res}
    ustar = params.equilibrium
    if ustar is not None:
        dist = float(np.max(np.abs(u - ustar)))
        fitted["dist_to_ustar"] = dist
        hyp = cfg.p > 1 + 2 / cfg.m and cfg.K < l_threshold(cfg.m, cfg.p, cfg.a)
        if hyp:
            checks.append(_check("constant_equilibrium", dist < 1e-4, dist, 1e-4, "sup |u - u*|"))
    est = elliptic_estimate_check(model, u, params, cfg.m, cfg.K, cfg.R, cfg.x0)
    fitted["estimate"] = est.as_dict()
    return checks, fitted


def _run_asymptotics(cfg, out: _Outputs):
    model = cfg.build_model()
    params = cfg.equation()
    traj = solve_parabolic(model, initial_data(cfg, model), params, cfg.solve_config())
    hp = None
    if cfg.a > 0 or cfg.K == 0:
        hp = _harnack_params(cfg)
    suite = check_liouville_suite(
        traj, params, hp=hp, rate_tolerance=cfg.rate_tolerance, exponent_tolerance=cfg.exponent_tolerance
    )
    keys, rows = _series_rows(traj)
    out.csv("series.csv", keys, rows)
    out.json("suite.json", suite.as_dict())
    checks = [_jsonable(c.as_dict()) for c in suite.checks]
    fitted = dict(suite.fitted_rates)
    if hp is not None:
        fitted.update(gamma=hp.gamma, delta=hp.delta)
    return checks, fitted


def _run_lemma(cfg, out: _Outputs):
    hp = _harnack_params(cfg)
    params = cfg.equation()
    spacings, violations, defects, scales = [], [], [], []
    for level in range(cfg.levels):
        model = cfg.build_model(cfg.resolution * 2**level)
        u = initial_data(cfg, model)
        terms = lemma_kl_terms(model, u, params, hp, cfg.m)
        spacings.append(model.h)
        violations.append(float(np.max(np.maximum(terms.residual, 0.0))))
        defects.append(float(np.max(np.abs(terms.identity_defect))))
        scales.append(float(np.max(np.abs(terms.lhs))) + float(np.max(np.abs(terms.rhs))))
        if level == 0:
            out.csv(
                "lemma.csv",
                _node_header(model, ["lhs", "rhs", "residual", "identity_defect"]),
                _node_rows(model, [terms.lhs, terms.rhs, terms.residual, terms.identity_defect]),
            )
    out.csv("lemma_ladder.csv", ["h", "max_violation", "max_identity_defect"], zip(spacings, violations, defects))
    fitted = {"spacings": spacings, "max_violation": violations, "max_identity_defect": defects}
    floor = 1e-10
    if max(scales) <= 1e-300 or max(defects + violations) <= floor:
        checks = [_check("homogeneous_residual", max(violations) < floor, max(violations), floor)]
        return checks, fitted
    checks = []
    # violations already at roundoff need no order
    if violations[-1] <= floor * max(1.0, max(scales)):
        checks.append(_check("violation_vanishes", True, violations[-1], floor * max(1.0, max(scales))))
    else:
        order = fit_order(spacings, violations)
        fitted["violation_order"] = order
        checks.append(_check("violation_order", order >= 1.7, order, 1.7))
    order = fit_order(spacings, defects)
    fitted["identity_defect_order"] = order
    checks.append(_check("identity_defect_order", order >= 1.7, order, 1.7))
    return checks, fitted


def _run_cutoff(cfg, out: _Outputs):
    reports = []
    for level in range(2):
        model = cfg.build_model(cfg.resolution * 2**level)
        prof = cutoff_phi(model, cfg.x0, cfg.R)
        rep = cutoff_verify(prof, model, cfg.m, cfg.K)
        reports.append(rep)
        if level == 0:
            out.csv(
                "cutoff.csv",
                _node_header(model, ["distance", "phi", "grad_ratio", "laplacian"]),
                _node_rows(model, [prof.distance, prof.values, prof.grad_ratio, prof.laplacian]),
            )
    coarse, fine = reports
    checks = [
        _check("ones_inside", coarse.ones_inside and fine.ones_inside),
        _check("zeros_outside", coarse.zeros_outside and fine.zeros_outside),
        _check("unit_interval", coarse.values_in_unit_interval and fine.values_in_unit_interval),
        _check("non_increasing", coarse.non_increasing and fine.non_increasing),
    ]
    for name in ("gradient_ratio", "laplacian_ratio"):
        c, f = getattr(coarse, name), getattr(fine, name)
        rel = abs(f - c) / abs(f) if f != 0 else math.inf
        checks.append(_check(f"{name}_stable", math.isfinite(c) and math.isfinite(f) and rel <= 0.1, rel, 0.1, f"{c:.6g} -> {f:.6g}"))
    return checks, {"coarse": coarse.as_dict(), "fine": fine.as_dict(), "R": cfg.R}


_REGION_HEADER = ["m", "p", "a", "K", "regime", "gamma", "delta", "margin1", "margin2", "margin3", "margin4", "feasible", "in_regime"]


def _region_row(m, p, a, K, regime, g, d, margins, feasible, in_regime):
    return [m, p, a, K, Regime.parse(regime).value, g, d, *margins, bool(feasible), bool(in_regime)]


def _sweep_task(task):
    regime, m, p, a, K, L = task
    if regime == "DL":
        hp = feasibility_search(Regime.DL, m, p, a, K)
        return _region_row(m, p, a, K, "DL", hp.gamma, hp.delta, hp.report.margins, hp.report.feasible, True)
    score, g, d = dg1_best_point(m, p, a, K)
    plus = constraint_margins_dl(m, p, a, K, g, d).margins
    minus = constraint_margins_dl(m, p, a, K, g, -d).margins
    margins = tuple(min(x, y) for x, y in zip(plus, minus))
    return _region_row(m, p, a, K, "DG1", g, d, margins, min(margins) > 0, K < L)


def worker_count(requested: int) -> int:
    """Workers for a sweep: the config value capped by ``HARNACK_LAB_THREADS``."""
    cap = os.environ.get(THREADS_ENV)
    n = max(1, int(requested))
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return n


def _run_sweep(cfg, out: _Outputs):
    if not cfg.p > 1 + 2 / cfg.m:
        raise ValidationError(f"sweep needs p > 1 + 2/m = {1 + 2 / cfg.m:g} so that L(m,p,a) is defined")
    if not cfg.a > 0:
        raise ValidationError("sweep needs a > 0")
    L = l_threshold(cfg.m, cfg.p, cfg.a)
    # fractions of L rounded so that the row at K = L lands exactly on it
    Ks = L * np.round(np.linspace(0.0, cfg.sweep_max, cfg.sweep_points), 12)
    tasks = [(r, cfg.m, cfg.p, cfg.a, float(K), L) for K in Ks for r in ("DL", "DG1")]
    n = worker_count(cfg.workers)
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    out.csv("region.csv", _REGION_HEADER, rows)
    dl = [r for r in rows if r[4] == "DL"]
    dg_in = [r for r in rows if r[4] == "DG1" and r[-1]]
    dg_out = [r for r in rows if r[4] == "DG1" and not r[-1]]
    checks = [
        _check("dl_always_feasible", all(r[11] for r in dl), sum(not r[11] for r in dl), 0, "infeasible DL rows"),
        _check("dg1_feasible_below_L", all(r[11] for r in dg_in), sum(not r[11] for r in dg_in), 0, "infeasible DG1 rows with K < L"),
        _check("dg1_fails_above_L", not any(r[11] for r in dg_out), sum(r[11] for r in dg_out), 0, "feasible DG1 rows with K >= L"),
    ]
    return checks, {"L": L, "rows": len(rows), "workers": n, "out_of_regime_rows": len(dg_out)}


_RUNNERS = {
    "simulate": _run_simulate,
    "feasibility": _run_feasibility,
    "verify-harnack": _run_verify,
    "elliptic": _run_elliptic,
    "asymptotics": _run_asymptotics,
    "lemma-check": _run_lemma,
    "cutoff-check": _run_cutoff,
    "sweep": _run_sweep,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunReport:
    """Run ``cfg`` and write its tables plus ``report.json``.

    Errors from the numerical modules are caught and recorded in the
    report (exit code 2) with the experiment name as context.
    """
    out = _Outputs(Path(out_dir or cfg.out))
    start = time.perf_counter()
    checks, fitted, error = [], {}, None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            checks, fitted = _RUNNERS[cfg.experiment](cfg, out)
    except (HarnackLabError, ValueError, FloatingPointError) as exc:
        error = f"{cfg.experiment}: {type(exc).__name__}: {exc}"
    report = RunReport(
        experiment=cfg.experiment,
        config=cfg.echo(),
        checks=[_jsonable(c) for c in checks],
        fitted=_jsonable(fitted),
        outputs=sorted(set(out.files)) + ["report.json"],
        wall_time=time.perf_counter() - start,
        error=error,
    )
    (out.dir / "report.json").write_text(json.dumps(_jsonable(report.as_dict()), indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------------------
# presets


PRESETS = {
    "thm-1-1-harnack": (
        "Harnack bound sup t F < inf on the logistic torus (delta < 0 system)",
        """experiment = verify-harnack
model = torus
a = 1
b = -1
p = 2
m = 3
regime = DL
T = 2
ensemble = 4
initial_value = 0.5
mode = 3
""",
    ),
    "cor-1-2-trapping": (
        "Solutions started below u* stay below it",
        """experiment = asymptotics
model = torus
a = 1
b = -1
p = 2
m = 3
regime = DG1
T = 20
initial_value = 0.5
amplitude = 0.3
""",
    ),
    "thm-1-3-a0": (
        "Harnack bound with a = 0 on the sphere",
        """experiment = verify-harnack
model = sphere
a = 0
b = -1
p = 2
m = 3
regime = DL0
T = 5
initial_value = 1
amplitude = 0.5
mode = 2
""",
    ),
    "cor-1-6-decay": (
        "Power-law decay u ~ t^(-1/(p-1)) when a = 0",
        """experiment = asymptotics
model = circle
resolution = 64
a = 0
b = -1
p = 2
m = 2
regime = DL0
T = 100
initial_value = 1
amplitude = 0.3
""",
    ),
    "thm-1-7-dg": (
        "Harnack bound with delta > 0 for K below L(m, p, a)",
        """experiment = verify-harnack
model = circle
drift = 0.2*sin(theta)
a = 1
b = -1
p = 2.5
m = 3
regime = DG1
T = 2
ensemble = 6
initial_value = 0.5
mode = 6
""",
    ),
    "cor-1-9-convergence": (
        "Convergence to u* from above and below on the sphere",
        """experiment = asymptotics
model = sphere
a = 1
b = -1
p = 2
m = 3
regime = DG1
T = 20
initial_value = 1.2
amplitude = 0.1
mode = 2
""",
    ),
    "cor-1-10-rate": (
        "Exponential convergence at rate (p-1) a",
        """experiment = asymptotics
model = circle
a = 1
b = -1
p = 3
m = 2
regime = DG1
T = 12
initial_value = 0.6
amplitude = 0.2
""",
    ),
    "cor-1-11-elliptic": (
        "Positive steady states are the constant u*",
        """experiment = elliptic
model = torus
resolution = 48
a = 1
b = -1
p = 2
m = 3
regime = DG1
initial_value = 0.6
amplitude = 0.3
elliptic_tol = 1e-10
""",
    ),
    "lemma-2-1-check": (
        "Discrete differential inequality for F, refined twice",
        """experiment = lemma-check
model = circle
drift = sin(theta)
resolution = 32
a = 1
b = -1
p = 2
m = 3
regime = DL
initial_value = 1
amplitude = 0.5
levels = 3
""",
    ),
    "lemma-2-2-cutoff": (
        "Quartic cut-off profile properties",
        """experiment = cutoff-check
model = circle
m = 2
R = 0.7853981633974483
""",
    ),
}


def list_presets() -> dict:
    """Catalog of built-in experiments: ``{name: description}``."""
    return {name: desc for name, (desc, _) in PRESETS.items()}


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return PRESETS[name][1]


# ---------------------------------------------------------------------------
# command line


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="harnack-lab", description="Numerical experiments for Harnack estimates of u_t = Delta_V u + a u + b u^p.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("run",):
        sp = sub.add_parser(name, help="run the experiment named in the config" if name == "run" else f"run a {name} experiment")
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH")
        src.add_argument("--preset", metavar="NAME")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--resolution", type=int)
        sp.add_argument("--quiet", action="store_true")
    sub.add_parser("presets", help="list built-in experiments")
    return ap


def _print_report(report: RunReport, out_dir: Path):
    print(f"{report.experiment}: {'PASS' if report.passed else ('ERROR' if report.error else 'FAIL')} ({report.wall_time:.2f} s)")
    if report.error:
        print(f"  error: {report.error}")
    for c in report.checks:
        print(f"  [{'pass' if c['pass'] else 'FAIL'}] {c['name']}: {c['statistic']} (tol {c['tolerance']}) {c.get('detail', '')}".rstrip())
    for w in report.config.get("warnings", []):
        print(f"  warning: {w}")
    print(f"  outputs in {out_dir}: {', '.join(report.outputs)}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        for name, desc in list_presets().items():
            print(f"{name:22s} {desc}")
        return EXIT_PASS
    try:
        source = preset_text(args.preset) if args.preset else Path(args.config)
        overrides = {"seed": args.seed, "resolution": args.resolution}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if args.quiet else "default")
            cfg = parse_config(source, overrides)
        if args.command != "run" and cfg.experiment != args.command:
            raise ValidationError(f"config describes a {cfg.experiment} experiment, not {args.command}")
        if args.out:
            cfg = replace(cfg, out=args.out)
    except HarnackLabError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = run_experiment(cfg)
    if not args.quiet:
        _print_report(report, Path(cfg.out))
    elif report.error:
        print(report.error, file=sys.stderr)
    return report.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
