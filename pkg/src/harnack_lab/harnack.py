"""Differential Harnack quantities, (gamma, delta) constraint systems and checks.

Notation: ``f = ln u``, ``s = e^{(p-1) f} = u^(p-1)``, ``w = a + b s`` and

    F = gamma |grad f|^2 - f_t + delta w,

with ``f_t = u_t / u`` and ``u_t`` given by :func:`harnack_lab.solver.rhs`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional

import numpy as np

from harnack_lab.errors import (
    DomainError,
    Infeasible,
    InfeasibleParams,
    NonPositiveField,
    RadiusTooLarge,
    RegimeError,
    SearchFailure,
)
from harnack_lab.geometry import (
    FieldLike,
    ManifoldModel,
    ModelKind,
    _values,
    distance_from,
    drift_laplacian,
    gradient_inner,
    gradient_sq,
    gradient,
    hessian_sq,
    hessian_traceless_sq,
    laplacian,
    ricci_v_tensor,
    ricci_vm_tensor,
    tensor_form,
)
from harnack_lab.solver import EquationParams, Trajectory, rhs, rhs_time_derivative


class Regime(str, Enum):
    DL = "DL"  # delta < 0, a > 0
    DL0 = "DL0"  # a = 0, delta = -1
    DG1 = "DG1"  # delta > 0, p > 1 + 2/m, K < L(m, p, a)
    DG2 = "DG2"  # delta > 0, max(4/m, 1) < p <= 1 + 2/m, K = 0
    ELLIPTIC_DGE = "ELLIPTIC_DGE"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper().replace("-", "_"))
        except ValueError:
            raise DomainError(f"unknown regime {value!r}") from None


@dataclass(frozen=True)
class ConstraintReport:
    curvature_margin: float
    mixed_term_margin: float
    L_constant_margin: float
    L_slope_margin: float
    feasible: bool
    strict: bool = False

    @property
    def margins(self) -> tuple[float, float, float, float]:
        return (
            self.curvature_margin,
            self.mixed_term_margin,
            self.L_constant_margin,
            self.L_slope_margin,
        )

    @property
    def min_margin(self) -> float:
        return min(self.margins)

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class HarnackParams:
    gamma: float
    delta: float
    regime: Regime
    report: Optional[ConstraintReport] = None

    def __post_init__(self):
        g, d = self.gamma, self.delta
        if self.regime is Regime.ELLIPTIC_DGE:
            if not g > 0:
                raise DomainError("gamma must be positive")
            return
        if not 0 < g < 1:
            raise DomainError(f"gamma must lie in (0, 1) for {self.regime.value}, got {g}")
        if self.regime is Regime.DL and not d < 0:
            raise DomainError(f"DL requires delta < 0, got {d}")
        if self.regime is Regime.DL0 and d != -1:
            raise DomainError(f"DL0 fixes delta = -1, got {d}")
        if self.regime in (Regime.DG1, Regime.DG2) and not 0 < d < 1:
            raise DomainError(f"{self.regime.value} requires delta in (0, 1), got {d}")

    @property
    def absolute(self) -> bool:
        """DG regimes bound ``delta |a + b u^(p-1)|`` rather than ``delta (a + b u^(p-1))``."""
        return self.regime in (Regime.DG1, Regime.DG2)

    @property
    def feasible(self) -> bool:
        return self.report is not None and self.report.feasible

    def as_dict(self):
        d = {"gamma": self.gamma, "delta": self.delta, "regime": self.regime.value}
        if self.report is not None:
            d["margins"] = self.report.as_dict()
        return d


# ---------------------------------------------------------------------------
# the Harnack quantity


def _positive(model, u) -> np.ndarray:
    u = _values(model, u)
    if np.any(u <= 0):
        raise NonPositiveField("Harnack quantities need a strictly positive field")
    return u


def harnack_quantity(
    model: ManifoldModel,
    u: FieldLike,
    params: EquationParams,
    hp: HarnackParams,
    absolute: Optional[bool] = None,
) -> np.ndarray:
    """Pointwise ``gamma |grad u|^2/u^2 - u_t/u + delta (a + b u^(p-1))``.

    With ``absolute`` (default: on for DG regimes) the last term uses
    ``|a + b u^(p-1)|``.
    """
    u = _positive(model, u)
    absolute = hp.absolute if absolute is None else absolute
    f = np.log(u)
    ft = rhs(model, u, params) / u
    w = params.a + params.b * u ** (params.p - 1.0)
    if absolute:
        w = np.abs(w)
    return hp.gamma * gradient_sq(model, f) - ft + hp.delta * w


def l_threshold(m: float, p: float, a: float) -> float:
    """Curvature ceiling ``L(m, p, a)`` below which the delta > 0 estimate holds."""
    if m < 1:
        raise DomainError(f"L(m,p,a) needs m >= 1, got {m}")
    if a < 0:
        raise DomainError(f"L(m,p,a) needs a >= 0, got {a}")
    if p < 1 + 2 / m:
        raise DomainError(f"L(m,p,a) is defined for p >= 1 + 2/m = {1 + 2 / m:g}, got p={p}")
    if p < 1 + 4 / m:
        return (p - 1) * a / 2
    return 2 * a / m


# ---------------------------------------------------------------------------
# constraint systems


def _dl_margins(m, p, a, K, gamma, delta):
    curvature = (2 * a / m) * (1 - gamma) * (1 - delta) - K
    mixed = (gamma - delta) * (p - 1) - delta * (p - 1) ** 2 - (4 / m) * gamma * (1 - gamma) * (1 - delta)
    # L(s) = (4/m) g (1-d) (a + b s) - b (p-1) s is affine in s > 0 with b <= 0:
    # constant coefficient and (-b) times the slope coefficient
    l_const = (4 / m) * gamma * (1 - delta) * a
    l_slope = (p - 1) - (4 / m) * gamma * (1 - delta)
    return curvature, mixed, l_const, l_slope


def constraint_margins_dl(m, p, a, K, gamma, delta) -> ConstraintReport:
    """Margins of the delta < 0 system; feasible when all four are >= 0."""
    margins = _dl_margins(m, p, a, K, gamma, delta)
    return ConstraintReport(*map(float, margins), feasible=all(x >= 0 for x in margins))


def constraint_margins_dg1(m, p, a, K, gamma, delta) -> ConstraintReport:
    """Margins of the delta > 0 system, required to hold for every delta' in [-delta, delta].

    Each margin is affine in delta, so the worst case over the interval is
    the smaller of the two endpoint values.  Feasible when all are > 0.
    """
    if not p > 1 + 2 / m:
        raise RegimeError(f"DG1 requires p > 1 + 2/m = {1 + 2 / m:g}, got p={p}")
    L = l_threshold(m, p, a)
    if not (0 <= K < L):
        raise RegimeError(f"DG1 requires K in [0, L(m,p,a)) = [0, {L:g}), got K={K}")
    if delta < 0:
        raise DomainError("DG1 margins take delta >= 0")
    plus = _dl_margins(m, p, a, K, gamma, delta)
    minus = _dl_margins(m, p, a, K, gamma, -delta)
    margins = tuple(float(min(x, y)) for x, y in zip(plus, minus))
    return ConstraintReport(*margins, feasible=all(x > 0 for x in margins), strict=True)


def _dg2_report(m, p, a, gamma, delta) -> ConstraintReport:
    c, mix, l0, l1 = map(float, _dl_margins(m, p, a, 0.0, gamma, delta))
    if abs(l1) < 1e-12:
        l1 = 0.0
    # L(s) > 0 for all s > 0 iff l0 >= 0, l1 >= 0 and not both zero
    ok = c > 0 and mix > 0 and l0 >= 0 and l1 >= 0 and (l0 > 0 or l1 > 0)
    return ConstraintReport(c, mix, l0, l1, feasible=ok, strict=True)


def sample_L_condition(m, p, a, gamma, delta, b=-1.0, n=10_000, rng=None) -> float:
    """Brute-force minimum of ``L(s)`` over random ``s`` in ``(0, 10 u*^(p-1)]``.

    Independent cross-check of the coefficient decomposition used by the
    margin functions.
    """
    rng = np.random.default_rng(rng)
    s_max = 10 * (-a / b) if a > 0 and b < 0 else 10.0
    s = s_max * (1.0 - rng.random(n))  # (0, s_max]
    L = (4 / m) * gamma * (1 - delta) * (a + b * s) - b * (p - 1) * s
    return float(np.min(L))


def margins_for(hp: HarnackParams, m, p, a, K) -> ConstraintReport:
    """Recompute the constraint report of ``hp`` at the given parameters."""
    if hp.regime is Regime.DG1:
        return constraint_margins_dg1(m, p, a, K, hp.gamma, hp.delta)
    if hp.regime is Regime.DG2:
        if K != 0:
            raise RegimeError("DG2 requires K = 0")
        return _dg2_report(m, p, a, hp.gamma, hp.delta)
    if hp.regime is Regime.ELLIPTIC_DGE:
        rep = constraint_margins_dl(m, p, a, K, hp.gamma, hp.delta)
        # the elliptic choice is a fixed pair, not a feasibility problem
        return ConstraintReport(*rep.margins, feasible=True)
    return constraint_margins_dl(m, p, a, K, hp.gamma, hp.delta)


def dg_case2_params(m, p, a, max_halvings: int = 60) -> tuple[HarnackParams, HarnackParams]:
    """Parameters for the delta > 0 estimate when ``max(4/m, 1) < p <= 1 + 2/m``.

    gamma_1 approaches 1 from (1/2, 1) with ``delta_1 = 1 - m (p-1)/(4 gamma_1)``
    until the system is strictly satisfied; the companion (gamma_2, -delta_1)
    solves the delta < 0 system with K = 0.
    """
    if not (max(4 / m, 1) < p <= 1 + 2 / m):
        raise RegimeError(
            f"DG2 requires max(4/m, 1) < p <= 1 + 2/m, i.e. p in ({max(4 / m, 1):g}, {1 + 2 / m:g}]; got p={p}"
        )
    if not a > 0:
        raise RegimeError("DG2 requires a > 0")
    hp1 = None
    for k in range(1, max_halvings + 1):
        g1 = 1.0 - 0.5**k / 2  # 0.75, 0.875, ... -> 1
        d1 = 1.0 - m * (p - 1) / (4 * g1)
        if not 0 < d1 < 1:
            continue
        rep = _dg2_report(m, p, a, g1, d1)
        if rep.feasible:
            hp1 = HarnackParams(g1, d1, Regime.DG2, rep)
            break
    if hp1 is None:
        raise SearchFailure(f"no gamma_1 in (1/2, 1) satisfies the DG2 system for m={m}, p={p}")
    g2 = hp1.gamma
    for _ in range(max_halvings):
        g2 /= 2
        rep = constraint_margins_dl(m, p, a, 0.0, g2, -hp1.delta)
        if rep.feasible:
            return hp1, HarnackParams(g2, -hp1.delta, Regime.DL, rep)
    raise SearchFailure("no small gamma_2 satisfies the companion delta < 0 system")


def _grid_search(objective, g_range, d_range, log_delta, points, refinements):
    g_lo, g_hi = g_range
    d_lo, d_hi = d_range
    best = None
    for level in range(refinements + 1):
        gs = g_lo + (np.arange(points) + 0.5) * (g_hi - g_lo) / points
        if log_delta:
            ld = np.log(d_lo) + (np.arange(points) + 0.5) * (np.log(d_hi) - np.log(d_lo)) / points
            ds = np.exp(ld)
        else:
            ds = d_lo + (np.arange(points) + 0.5) * (d_hi - d_lo) / points
        G, D = np.meshgrid(gs, ds, indexing="ij")
        score = objective(G, D)
        i, j = np.unravel_index(np.nanargmax(score), score.shape)
        cand = (float(score[i, j]), float(gs[i]), float(ds[j]))
        if best is None or cand[0] > best[0]:
            best = cand
        # zoom 8x around the incumbent, clipped to the original box
        _, g0, d0 = best
        gw = (g_hi - g_lo) / 8
        g_lo, g_hi = max(g_range[0], g0 - gw / 2), min(g_range[1], g0 + gw / 2)
        if log_delta:
            lw = (np.log(d_hi) - np.log(d_lo)) / 8
            d_lo = max(d_range[0], float(np.exp(np.log(d0) - lw / 2)))
            d_hi = min(d_range[1], float(np.exp(np.log(d0) + lw / 2)))
        else:
            dw = (d_hi - d_lo) / 8
            d_lo, d_hi = max(d_range[0], d0 - dw / 2), min(d_range[1], d0 + dw / 2)
    return best


def feasibility_search(regime, m, p, a, K, points: int = 64, refinements: int = 2) -> HarnackParams:
    """Find (gamma, delta) maximising the smallest constraint margin.

    A ``points x points`` grid over the regime's box is refined twice by a
    factor of 8 around the incumbent.  Raises ``RegimeError`` when the
    regime's hypotheses fail and ``Infeasible`` if no feasible point exists.
    """
    regime = Regime.parse(regime)
    if not m > 0 or K < 0:
        raise RegimeError("need m > 0 and K >= 0")

    if regime is Regime.DG2:
        if K != 0:
            raise RegimeError("DG2 requires K = 0")
        return dg_case2_params(m, p, a)[0]

    if regime is Regime.ELLIPTIC_DGE:
        hp = HarnackParams(2 / 3, min(0.5, 2 / (3 * p)), Regime.ELLIPTIC_DGE)
        return HarnackParams(hp.gamma, hp.delta, hp.regime, margins_for(hp, m, p, a, K))

    if regime is Regime.DL:
        if not a > 0:
            raise RegimeError("DL requires a > 0")
        depth = 2.0 * (1.0 + m * K / a)

        def objective(G, D):
            return np.min(np.stack(_dl_margins(m, p, a, K, G, D)), axis=0)

        score, g, d = _grid_search(objective, (0.0, 1.0), (-depth, 0.0), False, points, refinements)
        rep = constraint_margins_dl(m, p, a, K, g, d)
        best = HarnackParams(g, d, Regime.DL, rep)

    elif regime is Regime.DL0:
        if a != 0:
            raise RegimeError("DL0 requires a = 0")
        if K != 0:
            raise RegimeError("DL0 requires nonnegative curvature (K = 0)")
        gs = (np.arange(points) + 0.5) / points
        for _ in range(refinements + 1):
            scores = np.array([_dl0_objective(m, p, g) for g in gs])
            k = int(np.argmax(scores))
            g = float(gs[k])
            width = (gs[1] - gs[0]) * points / 8
            gs = np.clip(g + (np.arange(points) / (points - 1) - 0.5) * width, 1e-9, 1 - 1e-9)
        rep = constraint_margins_dl(m, p, 0.0, 0.0, g, -1.0)
        best = HarnackParams(g, -1.0, Regime.DL0, rep)

    else:  # DG1
        if not a > 0:
            raise RegimeError("DG1 requires a > 0")
        if not p > 1 + 2 / m:
            raise RegimeError(f"DG1 requires p > 1 + 2/m = {1 + 2 / m:g}")
        L = l_threshold(m, p, a)
        if not K < L:
            raise RegimeError(f"DG1 requires K in [0, L(m,p,a)) = [0, {L:g}), got K={K}")

        _, g, d = dg1_best_point(m, p, a, K, points, refinements)
        rep = constraint_margins_dg1(m, p, a, K, g, d)
        if not rep.feasible:
            raise Infeasible(f"no feasible DG1 point (best min margin {rep.min_margin:.3e})", best=(g, d, rep))
        return HarnackParams(g, d, Regime.DG1, rep)

    if not best.report.feasible:
        raise Infeasible(
            f"no feasible {regime.value} point (best min margin {best.report.min_margin:.3e})",
            best=(best.gamma, best.delta, best.report),
        )
    return best


def dg1_best_point(m, p, a, K, points: int = 64, refinements: int = 2) -> tuple[float, float, float]:
    """Best ``(min margin, gamma, delta)`` of the symmetric delta > 0 system.

    No hypothesis checks, so it can probe curvature bounds at or beyond
    ``L(m, p, a)`` where the returned margin is expected to be <= 0.
    """

    def objective(G, D):
        plus = np.stack(_dl_margins(m, p, a, K, G, D))
        minus = np.stack(_dl_margins(m, p, a, K, G, -D))
        return np.min(np.minimum(plus, minus), axis=0)

    return _grid_search(objective, (0.0, 1.0), (1e-6, 1.0), True, points, refinements)


def _dl0_objective(m, p, g):
    rep = constraint_margins_dl(m, p, 0.0, 0.0, g, -1.0)
    # curvature and constant-L margins vanish identically when a = K = 0
    return min(rep.mixed_term_margin, rep.L_slope_margin)


# ---------------------------------------------------------------------------
# bounds and verification


def bound_rhs(C: float, t: float, R: float, K: float) -> float:
    """``C (1/t + (1 + sqrt(K) R)/R^2)`` with ``1/0 = inf`` and ``R = inf`` giving ``C/t``."""
    inv_t = math.inf if t == 0 else 1.0 / t
    if math.isinf(R):
        return C * inv_t
    return C * (inv_t + (1 + math.sqrt(K) * R) / R**2)


@dataclass
class HarnackReport:
    regime: str
    params: dict
    C_fit: float
    sup_tF_series: list[float]
    times: list[float]
    violation_flag: bool
    R: float = math.inf
    sup_G_series: Optional[list[float]] = None

    def as_dict(self):
        d = {
            "regime": self.regime,
            "params": self.params,
            "C_fit": self.C_fit,
            "sup_tF_series": self.sup_tF_series,
            "times": self.times,
            "violation_flag": self.violation_flag,
            "R": None if math.isinf(self.R) else self.R,
        }
        if self.sup_G_series is not None:
            d["sup_G_series"] = self.sup_G_series
        return d


def _grows_without_bound(series: np.ndarray) -> bool:
    """Monotone increase over the last half that is not levelling off.

    Saturating series (increments shrinking towards a constant) are bounded;
    the increase over the final quarter must keep pace with the one before.
    """
    series = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(series)):
        return True
    half = series[len(series) // 2 :]
    if len(half) < 4 or half[-1] <= 0 or not np.all(np.diff(half) > 0):
        return False
    mid = len(half) // 2
    early, late = half[mid] - half[0], half[-1] - half[mid]
    return bool(late >= 0.75 * early)


def verify_harnack(
    trajectory: Trajectory,
    hp: HarnackParams,
    m: float,
    K: float,
    R: float = math.inf,
    x0=None,
) -> HarnackReport:
    """Empirical Harnack constant of a run.

    Computes ``F`` at every recorded time and normalises by the bound's
    shape, ``C_fit = max(0, sup F / (1/t + (1 + sqrt(K) R)/R^2))``; with
    ``R = inf`` (compact models, global form) this is ``sup t F``.
    """
    p = trajectory.params
    report = margins_for(hp, m, p.p, p.a, K)
    if not report.feasible:
        raise InfeasibleParams(
            f"{hp.regime.value} parameters (gamma={hp.gamma:g}, delta={hp.delta:g}) are infeasible "
            f"for m={m}, p={p.p}, a={p.a}, K={K}"
        )
    model = trajectory.model
    if math.isinf(R):
        mask = np.ones(model.shape, dtype=bool)
        phi = None
    else:
        mask = distance_from(model, x0) < R
        phi = cutoff_phi(model, x0, R).values
    series, g_series = [], []
    for t, u in zip(trajectory.times, trajectory.fields):
        if t == 0:
            series.append(0.0)
            g_series.append(0.0)
            continue
        F = harnack_quantity(model, u, p, hp)
        scale = bound_rhs(1.0, t, R, K)
        series.append(float(np.max(F[mask])) / scale)
        if phi is not None:
            g_series.append(float(np.max(t * phi * F)))
    series = np.asarray(series)
    return HarnackReport(
        regime=hp.regime.value,
        params=hp.as_dict(),
        C_fit=max(0.0, float(np.max(series))),
        sup_tF_series=series.tolist(),
        times=trajectory.times.tolist(),
        violation_flag=_grows_without_bound(series),
        R=R,
        sup_G_series=g_series if phi is not None else None,
    )


# ---------------------------------------------------------------------------
# the key differential inequality


@dataclass
class LemmaTerms:
    """Both sides of the differential inequality for ``F`` at one snapshot."""

    lhs: np.ndarray
    rhs_terms: dict
    identity: np.ndarray
    F: np.ndarray

    @property
    def rhs(self) -> np.ndarray:
        return sum(self.rhs_terms.values())

    @property
    def residual(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def identity_defect(self) -> np.ndarray:
        """Discrete ``LF`` minus the exact expression it equals before the inequality step."""
        return self.lhs - self.identity


def lemma_kl_terms(model: ManifoldModel, u: FieldLike, params: EquationParams, hp: HarnackParams, m: float) -> LemmaTerms:
    u = _positive(model, u)
    if not m > model.n:
        raise DomainError(f"m={m} must exceed n={model.n}")
    a, b, p = params.a, params.b, params.p
    g, d = hp.gamma, hp.delta

    f = np.log(u)
    ut = rhs(model, u, params)
    ft = ut / u
    utt = rhs_time_derivative(model, u, ut, params)
    ftt = utt / u - ft * ft
    s = u ** (p - 1.0)
    w = a + b * s
    G = gradient_sq(model, f)
    F = g * G - ft + d * w

    # chain rule through the semidiscrete system, no temporal differencing
    Gt = 2.0 * gradient_inner(model, f, ft)
    wt = b * (p - 1.0) * s * ft
    Ft = g * Gt - ftt + d * wt
    lhs = drift_laplacian(model, F) - Ft

    grad_f = gradient(model, f)
    fF = gradient_inner(model, f, F)
    mixed = (g - d) * (p - 1) - d * (p - 1) ** 2 - (4 / m) * g * (1 - g) * (1 - d)
    terms = {
        "traceless_hessian": 2 * g * hessian_traceless_sq(model, f),
        "ricci": 2 * g * tensor_form(ricci_vm_tensor(model, m), grad_f),
        "transport": -2 * fF,
        "gradient": (4 / m) * a * g * (1 - g) * (1 - d) * G,
        "reaction_sq": (2 / m) * g * (1 - d) ** 2 * w * w,
        "mixed": -b * mixed * s * G,
        "linear_F": ((4 / m) * g * (1 - d) * w - b * (p - 1) * s) * F,
        "quadratic": (2 / m) * g * (1 - g) ** 2 * G * G + (2 / m) * g * F * F + (4 / m) * g * (1 - g) * G * F,
    }
    identity = (
        2 * g * hessian_sq(model, f)
        + 2 * g * tensor_form(ricci_v_tensor(model), grad_f)
        - 2 * fF
        + b * ((d - g) * (p - 1) + d * (p - 1) ** 2) * s * G
        - b * (p - 1) * s * F
    )
    return LemmaTerms(lhs=lhs, rhs_terms=terms, identity=identity, F=F)


def lemma_kl_residual(model: ManifoldModel, u: FieldLike, params: EquationParams, hp: HarnackParams, m: float) -> np.ndarray:
    """``RHS - LF`` of the lower bound for ``LF = Delta_V F - F_t``.

    Nonpositive in the continuum; on the grid it is ``<= O(h^2)``.
    """
    return lemma_kl_terms(model, u, params, hp, m).residual


# ---------------------------------------------------------------------------
# cut-off function


@dataclass(frozen=True, eq=False)
class CutoffProfile:
    x0: object
    R: float
    values: np.ndarray
    distance: np.ndarray
    grad_ratio: np.ndarray  # |grad Phi| / sqrt(Phi), zero where Phi = 0
    laplacian: np.ndarray
    model: ManifoldModel

    def discrete_laplacian(self) -> np.ndarray:
        return laplacian(self.model, self.values)


def quartic_profile(d, R):
    """``phi``, ``phi'`` and ``phi''`` of the C^1 quartic bump at distances ``d``."""
    d = np.asarray(d, dtype=float)
    s = np.clip((d - R) / (R / 2), 0.0, 1.0)
    inside = d <= R
    outside = d >= 1.5 * R
    phi = np.where(inside, 1.0, np.where(outside, 0.0, (1 - s * s) ** 2))
    k = 2.0 / R
    dphi = np.where(inside | outside, 0.0, -4 * s * (1 - s * s) * k)
    ddphi = np.where(inside | outside, 0.0, -4 * (1 - 3 * s * s) * k * k)
    return phi, dphi, ddphi


def cutoff_phi(model: ManifoldModel, x0, R: float) -> CutoffProfile:
    """Radial cut-off ``Phi = phi(d(x0, .))``: 1 on ``B(x0, R)``, 0 beyond ``3R/2``."""
    if not R > 0:
        raise DomainError("R must be positive")
    if 1.5 * R >= model.injectivity_scale:
        raise RadiusTooLarge(
            f"3R/2 = {1.5 * R:g} must stay below the injectivity scale {model.injectivity_scale:g}"
        )
    d = distance_from(model, x0)
    phi, dphi, ddphi = quartic_profile(d, R)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(phi > 0, np.abs(dphi) / np.sqrt(phi), 0.0)
    # radial Laplacian phi'' + (mean curvature of distance spheres) phi'
    if model.kind is ModelKind.CIRCLE:
        lap = ddphi
    elif model.kind is ModelKind.TORUS:
        with np.errstate(divide="ignore", invalid="ignore"):
            lap = ddphi + np.where(d > 0, dphi / d, 0.0)
    else:
        r = model.size
        with np.errstate(divide="ignore", invalid="ignore"):
            lap = ddphi + np.where(dphi != 0, dphi / (r * np.tan(d / r)), 0.0)
    return CutoffProfile(x0, float(R), phi, d, ratio, lap, model)


@dataclass
class CutoffReport:
    gradient_ratio: float  # sup(|grad Phi| / sqrt(Phi)) * R
    laplacian_ratio: float  # inf(Delta Phi) * R^2 / (1 + sqrt(K) R)
    ones_inside: bool
    zeros_outside: bool
    values_in_unit_interval: bool
    non_increasing: bool

    def as_dict(self):
        return asdict(self)


def cutoff_verify(profile: CutoffProfile, model: ManifoldModel, m: float, K: float = 0.0) -> CutoffReport:
    """Check the support, gradient and Laplacian properties of a cut-off profile."""
    R, d, phi = profile.R, profile.distance, profile.values
    order = np.argsort(d, axis=None)
    sorted_phi = np.ravel(phi)[order]
    return CutoffReport(
        gradient_ratio=float(np.max(profile.grad_ratio)) * R,
        laplacian_ratio=float(np.min(profile.laplacian)) * R**2 / (1 + math.sqrt(K) * R),
        ones_inside=bool(np.all(phi[d <= R] == 1.0)),
        zeros_outside=bool(np.all(phi[d >= 1.5 * R] == 0.0)),
        values_in_unit_interval=bool(np.all((phi >= 0) & (phi <= 1))),
        non_increasing=bool(np.all(np.diff(sorted_phi) <= 1e-15)),
    )


# ---------------------------------------------------------------------------
# elliptic estimates


@dataclass
class EllipticEstimate:
    lhs: float
    bound_scale: float
    ratio: float
    dge_sup: float

    def as_dict(self):
        return asdict(self)


def elliptic_estimate_check(model: ManifoldModel, u_steady: FieldLike, params: EquationParams, m: float, K: float, R: float, x0=None) -> EllipticEstimate:
    """Sup over ``B(x0, R)`` of the logarithmic-gradient-plus-reaction quantity.

    For ``a > 0``: ``|grad u|^2/u^2 + |a + b u^(p-1)|``; for ``a = 0``:
    ``|grad u|^2/u^2 - b u^(p-1)``.  The ratio is taken against ``1/R^2 + K``.
    ``dge_sup`` is the sup of ``F`` with the fixed elliptic pair
    ``gamma = 2/3``, ``delta = min(1/2, 2/(3p))``.
    """
    u = _positive(model, u_steady)
    f = np.log(u)
    G = gradient_sq(model, f)
    s = u ** (params.p - 1.0)
    w = params.a + params.b * s
    q = G + np.abs(w) if params.a > 0 else G - params.b * s
    mask = distance_from(model, x0) < R if math.isfinite(R) else np.ones(model.shape, bool)
    lhs = float(np.max(q[mask]))
    scale = (1.0 / R**2 if math.isfinite(R) else 0.0) + K
    ratio = lhs / scale if scale > 0 else (0.0 if lhs == 0 else math.inf)
    g, d = 2 / 3, min(0.5, 2 / (3 * params.p))
    dge = float(np.max((g * G + d * w)[mask]))
    return EllipticEstimate(lhs=lhs, bound_scale=scale, ratio=ratio, dge_sup=dge)
