import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnack_lab.errors import DomainError, ShapeMismatch
from harnack_lab.geometry import (
    ModelKind,
    ScalarField,
    build_model,
    curvature_lower_bound,
    distance_from,
    drift_laplacian,
    gradient,
    gradient_inner,
    gradient_sq,
    hessian_sq,
    hessian_traceless_sq,
    integrate,
    laplacian,
    ricci_tensor,
    ricci_vm_pointwise,
    tensor_form,
)

TWO_PI = 2 * math.pi


def circle(n=64, drift=None):
    return build_model("circle", TWO_PI, n, drift)


def torus(n=32, drift=None):
    return build_model("torus", TWO_PI, n, drift)


def sphere(n=64, r=1.0):
    return build_model("sphere", r, n)


ALL_MODELS = [circle, torus, sphere]


# --- construction ----------------------------------------------------------


def test_flat_circle_has_requested_nodes():
    m = circle(64)
    assert m.kind is ModelKind.CIRCLE
    assert m.shape == (64,)
    assert m.h == pytest.approx(TWO_PI / 64)
    assert m.drift.is_zero


def test_unit_sphere_model():
    m = sphere(64)
    assert m.kind is ModelKind.SPHERE and m.size == 1.0
    theta = m.coords[0]
    assert theta[0] > 0 and theta[-1] < math.pi
    # band areas sum to the sphere area
    assert m.weights.sum() == pytest.approx(4 * math.pi, rel=1e-12)


def test_circle_drift_samples_sine_of_nodes():
    m = circle(64, "sin(theta)")
    np.testing.assert_allclose(m.drift.components[0], np.sin(m.coords[0]), atol=1e-15)
    np.testing.assert_allclose(m.drift.jacobian[0, 0], np.cos(m.coords[0]), atol=1e-14)


def test_torus_drift_components_split_on_semicolon():
    m = torus(16, "0.3*sin(y); 0.2*cos(x)")
    x, y = m.coords
    np.testing.assert_allclose(m.drift.components[0], 0.3 * np.sin(y), atol=1e-15)
    np.testing.assert_allclose(m.drift.components[1], 0.2 * np.cos(x), atol=1e-15)


@pytest.mark.parametrize(
    "args",
    [
        ("circle", TWO_PI, 4, None),
        ("circle", -1.0, 64, None),
        ("sphere", 1.0, 64, "sin(theta)"),
        ("circle", TWO_PI, 64, "theta"),  # not periodic
        ("torus", TWO_PI, 16, "sin(x)"),  # wrong number of components
        ("cube", 1.0, 16, None),
    ],
)
def test_invalid_models_rejected(args):
    with pytest.raises(DomainError):
        build_model(*args)


def test_scalar_field_positivity_and_shape():
    m = circle(16)
    with pytest.raises(DomainError):
        ScalarField.positive_field(-np.ones(16))
    with pytest.raises(ShapeMismatch):
        laplacian(m, np.ones(15))


# --- operators on constants ------------------------------------------------


@pytest.mark.parametrize("make", ALL_MODELS)
@given(c=st.floats(1e-3, 1e3))
@settings(max_examples=20, deadline=None)
def test_operators_annihilate_constants(make, c):
    m = make()
    u = m.constant(c)
    assert np.max(np.abs(laplacian(m, u))) <= 1e-12 * c
    assert np.max(np.abs(drift_laplacian(m, u))) <= 1e-12 * c
    assert np.max(np.abs(gradient_sq(m, u))) == 0.0
    assert np.max(np.abs(hessian_traceless_sq(m, u))) <= 1e-20 * c * c


def test_drift_laplacian_constant_with_drift():
    m = torus(24, "0.3*sin(y); 0.2*cos(x)")
    assert np.max(np.abs(drift_laplacian(m, m.constant(2.5)))) <= 1e-12


def test_drift_laplacian_without_drift_equals_laplacian():
    m = torus(24)
    x, y = m.coords
    u = np.exp(np.sin(x) * np.cos(2 * y))
    np.testing.assert_array_equal(drift_laplacian(m, u), laplacian(m, u))


# --- eigenfunctions and analytic values ------------------------------------


def _err_circle_cos(n):
    m = circle(n)
    th = m.coords[0]
    return np.max(np.abs(laplacian(m, np.cos(th)) + np.cos(th)))


def _err_sphere_cos(n):
    m = sphere(n)
    th = m.coords[0]
    return np.max(np.abs(laplacian(m, np.cos(th)) + 2 * np.cos(th)))


@pytest.mark.parametrize("err", [_err_circle_cos, _err_sphere_cos])
def test_eigenfunction_second_order(err):
    errors = [err(n) for n in (32, 64, 128)]
    assert errors[-1] < 1e-3
    for e1, e2 in zip(errors, errors[1:]):
        assert 3.5 <= e1 / e2 <= 4.5


def test_drift_laplacian_constant_drift_on_circle():
    c = 0.7
    m = circle(128, str(c))
    th = m.coords[0]
    got = drift_laplacian(m, np.sin(th))
    want = -np.sin(th) + c * np.cos(th)
    assert np.max(np.abs(got - want)) < 2 * m.h**2


def test_gradient_sq_of_sine():
    m = circle(128)
    th = m.coords[0]
    assert np.max(np.abs(gradient_sq(m, np.sin(th)) - np.cos(th) ** 2)) < m.h**2


def test_sphere_gradient_of_constant_is_zero():
    m = sphere(32, r=2.0)
    assert np.all(gradient_sq(m, m.constant(3.0)) == 0)


def test_hessian_traceless_vanishes_on_circle():
    m = circle(64)
    th = m.coords[0]
    assert np.all(hessian_traceless_sq(m, np.exp(np.sin(th))) == 0)


def test_torus_hessian_of_quadratic_like_field():
    m = torus(128)
    x, y = m.coords
    u = np.sin(x) + np.sin(y)
    # Hessian diag(-sin x, -sin y): |H|^2 and traceless part
    np.testing.assert_allclose(hessian_sq(m, u), np.sin(x) ** 2 + np.sin(y) ** 2, atol=5 * m.h**2)
    np.testing.assert_allclose(hessian_traceless_sq(m, u), 0.5 * (np.sin(x) - np.sin(y)) ** 2, atol=5 * m.h**2)


# --- integration by parts and Bochner ---------------------------------------


@pytest.mark.parametrize("make", [circle, torus, sphere])
@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_laplacian_is_symmetric_under_quadrature(make, seed):
    m = make(16)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(m.shape)
    v = rng.standard_normal(m.shape)
    lhs = integrate(m, laplacian(m, u) * v)
    rhs_ = integrate(m, u * laplacian(m, v))
    scale = integrate(m, np.abs(laplacian(m, u) * v)) + 1.0
    assert abs(lhs - rhs_) <= 1e-12 * scale


def _bochner_defect(m, f):
    lap_f = laplacian(m, f)
    G = gradient_sq(m, f)
    grad_f = gradient(m, f)
    ric = tensor_form(ricci_tensor(m), grad_f)
    return 0.5 * laplacian(m, G) - hessian_sq(m, f) - gradient_inner(m, f, lap_f) - ric


def _bochner_field(m):
    if m.kind is ModelKind.TORUS:
        x, y = m.coords
        return np.sin(x) * np.cos(y) + 0.3 * np.cos(2 * x)
    th = m.coords[0]
    if m.kind is ModelKind.SPHERE:
        return np.cos(th) + 0.2 * np.cos(th) ** 2
    return np.sin(th) + 0.4 * np.cos(3 * th)


@pytest.mark.parametrize("kind", ["circle", "torus", "sphere"])
def test_bochner_residual_is_second_order(kind):
    size = 1.0 if kind == "sphere" else TWO_PI
    errs = []
    for n in (32, 64, 128):
        m = build_model(kind, size, n)
        d = _bochner_defect(m, _bochner_field(m))
        if kind == "sphere":
            # drop the two cells next to each pole where the cot term is stiffest
            d = d[3:-3]
        errs.append(np.max(np.abs(d)))
    order = math.log(errs[0] / errs[2], 4)
    assert order >= 1.7, errs


# --- curvature -------------------------------------------------------------


@pytest.mark.parametrize("mdim", [2.5, 3.0, 10.0])
def test_flat_torus_curvature_zero(mdim):
    m = torus(16)
    assert np.all(ricci_vm_pointwise(m, mdim) == 0)
    assert curvature_lower_bound(m, mdim).K == 0


def test_unit_sphere_curvature_one():
    m = sphere(32)
    np.testing.assert_allclose(ricci_vm_pointwise(m, 3), 1.0)
    assert curvature_lower_bound(m, 3).K == 0


def test_sphere_curvature_scales_with_radius():
    np.testing.assert_allclose(ricci_vm_pointwise(sphere(16, r=2.0), 3), 0.25)


def test_circle_with_sine_drift_curvature():
    m = circle(256, "sin(theta)")
    th = m.coords[0]
    np.testing.assert_allclose(ricci_vm_pointwise(m, 3), -np.cos(th) - np.sin(th) ** 2 / 2, atol=1e-14)
    assert curvature_lower_bound(m, 3).K == pytest.approx(1.0, abs=1e-12)


@given(m1=st.floats(2.1, 50), m2=st.floats(2.1, 50))
@settings(max_examples=20, deadline=None)
def test_zero_drift_curvature_independent_of_m(m1, m2):
    m = sphere(16)
    np.testing.assert_array_equal(ricci_vm_pointwise(m, m1), ricci_vm_pointwise(m, m2))


def test_curvature_needs_m_above_dimension():
    with pytest.raises(DomainError):
        ricci_vm_pointwise(torus(8), 2.0)


# --- distance --------------------------------------------------------------


def test_periodic_distance():
    m = circle(64)
    d = distance_from(m, 0.0)
    assert d.max() <= math.pi + 1e-12
    assert d[0] == 0


def test_sphere_distance_from_pole():
    m = sphere(32, r=2.0)
    np.testing.assert_allclose(distance_from(m, "north"), 2.0 * m.coords[0])
    np.testing.assert_allclose(distance_from(m, "south"), 2.0 * (math.pi - m.coords[0]))
    with pytest.raises(DomainError):
        distance_from(m, 1.0)
