import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnack_lab.errors import DomainError, NoConvergence, NonPositiveField, PositivityLost, StabilityViolation
from harnack_lab.geometry import build_model
from harnack_lab.solver import (
    EquationParams,
    SolveConfig,
    manufactured_problem,
    manufactured_residual,
    rhs,
    solve_elliptic,
    solve_parabolic,
)

TWO_PI = 2 * math.pi
LOGISTIC = EquationParams(1.0, -1.0, 2.0)


@pytest.fixture(scope="module")
def circle():
    return build_model("circle", TWO_PI, 64)


@pytest.fixture(scope="module")
def torus():
    return build_model("torus", TWO_PI, 24, "0.3*sin(y); 0.2*cos(x)")


@pytest.mark.parametrize(
    "bad", [dict(a=-1, b=-1, p=2), dict(a=1, b=1, p=2), dict(a=1, b=-1, p=1), dict(a=1, b=-1, p=0.5)]
)
def test_equation_params_hypotheses(bad):
    with pytest.raises(DomainError):
        EquationParams(**bad)


def test_equilibrium():
    assert EquationParams(2.0, -0.5, 3.0).equilibrium == pytest.approx(2.0)
    assert EquationParams(0.0, -1.0, 2.0).equilibrium is None


# --- rhs -------------------------------------------------------------------


@pytest.mark.parametrize("kind,size,drift", [("circle", TWO_PI, "sin(theta)"), ("torus", TWO_PI, "0.3*sin(y); 0.2*cos(x)"), ("sphere", 1.0, None)])
@given(a=st.floats(0.1, 5), b=st.floats(-5, -0.1), p=st.floats(1.1, 5))
@settings(max_examples=15, deadline=None)
def test_rhs_vanishes_at_equilibrium(kind, size, drift, a, b, p):
    m = build_model(kind, size, 16, drift)
    params = EquationParams(a, b, p)
    u = m.constant(params.equilibrium)
    assert np.max(np.abs(rhs(m, u, params))) <= 1e-12 * max(1.0, a * params.equilibrium)


def test_rhs_examples(circle):
    np.testing.assert_allclose(rhs(circle, circle.constant(3.0), EquationParams(0, -1, 2)), -9.0)
    np.testing.assert_allclose(rhs(circle, circle.constant(0.5), LOGISTIC), 0.25)


def test_rhs_rejects_nonpositive(circle):
    u = circle.constant(1.0)
    u[3] = 0.0
    with pytest.raises(NonPositiveField):
        rhs(circle, u, LOGISTIC)


# --- parabolic solves ------------------------------------------------------


def test_logistic_homogeneous_matches_closed_form(circle):
    T = math.log(3)
    traj = solve_parabolic(circle, circle.constant(0.5), LOGISTIC, SolveConfig(T=T))
    assert traj.final_time == pytest.approx(T, abs=1e-12)
    np.testing.assert_allclose(traj.final, 0.75, rtol=1e-6)


def test_a0_homogeneous_matches_closed_form(circle):
    traj = solve_parabolic(circle, circle.constant(1.0), EquationParams(0, -1, 2), SolveConfig(T=1.0))
    np.testing.assert_allclose(traj.final, 0.5, rtol=1e-6)


@pytest.mark.parametrize("kind,size", [("circle", TWO_PI), ("torus", TWO_PI), ("sphere", 1.0)])
def test_equilibrium_is_stationary(kind, size):
    m = build_model(kind, size, 16)
    params = EquationParams(2.0, -1.0, 3.0)
    traj = solve_parabolic(m, m.constant(params.equilibrium), params, SolveConfig(T=1.0))
    assert np.max(np.abs(traj.fields - params.equilibrium)) <= 1e-14


def test_trapping_below_equilibrium(torus):
    x, y = torus.coords
    u0 = 0.5 + 0.3 * np.sin(x) * np.cos(y)
    traj = solve_parabolic(torus, u0, LOGISTIC, SolveConfig(T=3.0))
    assert traj.fields.max() <= 1.0 + 10 * torus.h**2


@given(lam=st.sampled_from([0.1, 3.0, 50.0]))
@settings(max_examples=3, deadline=None)
def test_scaling_covariance(lam):
    m = build_model("circle", TWO_PI, 32, "sin(theta)")
    th = m.coords[0]
    u0 = 0.6 + 0.3 * np.sin(2 * th)
    cfg = SolveConfig(T=0.5)
    a = solve_parabolic(m, u0, LOGISTIC, cfg)
    b = solve_parabolic(m, lam * u0, LOGISTIC.scaled(lam), cfg)
    assert np.max(np.abs(b.fields - lam * a.fields)) <= 1e-10 * lam


def test_time_translation(circle):
    th = circle.coords[0]
    u0 = 0.4 + 0.2 * np.cos(th)
    dt = SolveConfig().max_stable_dt(circle) / 2
    full = solve_parabolic(circle, u0, LOGISTIC, SolveConfig(T=400 * dt, dt=dt))
    first = solve_parabolic(circle, u0, LOGISTIC, SolveConfig(T=150 * dt, dt=dt))
    second = solve_parabolic(circle, first.final, LOGISTIC, SolveConfig(T=250 * dt, dt=dt))
    np.testing.assert_allclose(second.final, full.final, rtol=0, atol=1e-14)


def test_explicit_dt_above_limit_rejected(circle):
    with pytest.raises(StabilityViolation):
        solve_parabolic(circle, circle.constant(0.5), LOGISTIC, SolveConfig(T=1.0, dt=circle.h**2))


def test_positivity_floor_breach_reports_time(circle):
    th = circle.coords[0]
    u0 = 1.0 + 0.5 * np.sin(th)
    forcing = lambda t: -50.0 * np.ones_like(th)  # noqa: E731
    with pytest.raises(PositivityLost) as info:
        solve_parabolic(circle, u0, LOGISTIC, SolveConfig(T=1.0), forcing=forcing)
    assert 0 < info.value.time < 1.0


def test_trajectory_records_and_is_read_only(circle):
    traj = solve_parabolic(circle, circle.constant(0.5), LOGISTIC, SolveConfig(T=1.0, max_records=10))
    assert traj.times[0] == 0 and traj.times[-1] == pytest.approx(1.0)
    assert len(traj) <= 12
    with pytest.raises(ValueError):
        traj.fields[0, 0] = 1.0
    np.testing.assert_allclose(traj.rates(0), rhs(circle, traj.fields[0], LOGISTIC))


def test_trajectory_csv_export(tmp_path, torus):
    traj = solve_parabolic(torus, torus.constant(0.5), LOGISTIC, SolveConfig(T=0.1, max_records=3))
    paths = traj.to_csv(tmp_path / "traj.csv")
    lines = (tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0] == "t,node_index,x,y,u,u_t"
    assert len(lines) == 1 + len(traj) * 24 * 24
    meta = json.loads((tmp_path / "traj.json").read_text())
    assert meta["model"]["kind"] == "torus" and meta["params"] == {"a": 1.0, "b": -1.0, "p": 2.0}
    assert len(paths) == 2


# --- elliptic --------------------------------------------------------------


def test_elliptic_torus_converges_to_equilibrium():
    m = build_model("torus", TWO_PI, 16)
    x, y = m.coords
    u = solve_elliptic(m, LOGISTIC, SolveConfig(elliptic_tol=1e-10), initial_guess=0.3 + 0.1 * np.sin(x))
    assert np.max(np.abs(u.values - 1.0)) < 1e-8


def test_elliptic_sphere_p3():
    m = build_model("sphere", 1.0, 32)
    u = solve_elliptic(m, EquationParams(1, -1, 3), SolveConfig(elliptic_tol=1e-10), initial_guess=0.5)
    assert np.max(np.abs(u.values - 1.0)) < 1e-8


def test_elliptic_at_equilibrium_returns_immediately(circle):
    u = solve_elliptic(circle, LOGISTIC, SolveConfig(max_iter=1), initial_guess=1.0)
    np.testing.assert_array_equal(u.values, 1.0)


def test_elliptic_budget_exhaustion(circle):
    with pytest.raises(NoConvergence):
        solve_elliptic(circle, LOGISTIC, SolveConfig(max_iter=60), initial_guess=0.3)


# --- manufactured solutions ------------------------------------------------


def test_manufactured_order_on_circle():
    m = build_model("circle", TWO_PI, 16)
    exact, forcing = manufactured_problem(m, LOGISTIC, "2 + sin(theta)*exp(-t)")
    rep = manufactured_residual(m, LOGISTIC, exact, forcing, resolutions=(16, 32, 64), T=0.5)
    assert 1.7 <= rep.order <= 2.3


def test_manufactured_spatially_constant_is_time_error_only():
    m = build_model("circle", TWO_PI, 16)
    exact, forcing = manufactured_problem(m, LOGISTIC, "1 + exp(-t)")
    rep = manufactured_residual(m, LOGISTIC, exact, forcing, resolutions=(16, 32), T=1.0)
    assert max(rep.errors) <= 1e-6


def test_manufactured_equilibrium_zero_error():
    m = build_model("sphere", 1.0, 16)
    rep = manufactured_residual(m, LOGISTIC, lambda mm, t: mm.constant(1.0), None, resolutions=(16, 32), T=0.5)
    assert rep.errors == [0.0, 0.0]
