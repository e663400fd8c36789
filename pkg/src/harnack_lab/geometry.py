"""Model geometries, discrete differential operators and Bakry-Emery curvature.

Three model manifolds are supported:

* ``circle``: a circle of circumference ``L`` parametrised by arclength
  ``theta`` in ``[0, L)``, periodic, dimension 1.
* ``torus``: a flat square torus ``[0, L)^2`` with coordinates ``(x, y)``,
  periodic, dimension 2.
* ``sphere``: the round sphere of radius ``r`` restricted to fields depending
  on colatitude ``theta`` only.  Nodes are cell centred in ``(0, pi)`` so the
  poles are never grid points; even reflection closes the stencil there.

All operators are centred second-order finite differences and return plain
``numpy`` arrays in an orthonormal frame (the flat models' coordinate frame,
and ``(e_theta, e_phi)`` on the sphere).  Drift fields are given as sympy
expressions in the model coordinates so that their derivatives, and hence the
curvature, are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np
import sympy as sp

from harnack_lab.errors import DomainError, ShapeMismatch

MIN_RESOLUTION = 8


class ModelKind(str, Enum):
    CIRCLE = "circle"
    TORUS = "torus"
    SPHERE = "sphere"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "circle": cls.CIRCLE,
            "flattorus2d": cls.TORUS,
            "flat-torus": cls.TORUS,
            "torus": cls.TORUS,
            "sphereaxisym": cls.SPHERE,
            "sphere": cls.SPHERE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise DomainError(f"unknown model kind {value!r}") from None


COORDINATE_NAMES = {
    ModelKind.CIRCLE: ("theta",),
    ModelKind.TORUS: ("x", "y"),
    ModelKind.SPHERE: ("theta",),
}

DIMENSION = {ModelKind.CIRCLE: 1, ModelKind.TORUS: 2, ModelKind.SPHERE: 2}


@dataclass(frozen=True)
class CurvatureSpec:
    """Lower bound ``Ric_V^m >= -K g`` with Bakry-Emery dimension ``m``."""

    m: float
    K: float

    def __post_init__(self):
        if not self.K >= 0:
            raise DomainError(f"K must be nonnegative, got {self.K}")


@dataclass(frozen=True, eq=False)
class DriftField:
    """Vector field ``V`` sampled on a grid, with its exact Jacobian.

    ``components[i]`` is ``V^i`` and ``jacobian[i, j]`` is ``d_i V^j``, both in
    the orthonormal coordinate frame of a flat model.
    """

    expressions: tuple[str, ...]
    components: np.ndarray
    jacobian: np.ndarray
    is_zero: bool = field(init=False)

    def __post_init__(self):
        zero = not np.any(self.components) and not np.any(self.jacobian)
        object.__setattr__(self, "is_zero", zero)

    def __repr__(self):
        return f"DriftField({', '.join(self.expressions)})"


@dataclass(frozen=True)
class ScalarField:
    """Grid values with an optional positivity guarantee."""

    values: np.ndarray
    positive: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.positive and not np.all(values > 0):
            raise DomainError("field flagged positive has non-positive values")

    @classmethod
    def positive_field(cls, values) -> "ScalarField":
        return cls(values, positive=True)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape


FieldLike = Union[ScalarField, np.ndarray, Sequence[float], float]


@dataclass(frozen=True, eq=False)
class ManifoldModel:
    kind: ModelKind
    size: float
    resolution: int
    drift: DriftField
    coords: tuple[np.ndarray, ...]
    spacing: float
    weights: np.ndarray
    drift_spec: tuple[str, ...] = field(default=("0",))

    @property
    def n(self) -> int:
        return DIMENSION[self.kind]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.weights.shape

    @property
    def h(self) -> float:
        """Smallest physical grid spacing."""
        return self.spacing

    @property
    def periodic(self) -> bool:
        return self.kind is not ModelKind.SPHERE

    @property
    def injectivity_scale(self) -> float:
        if self.kind is ModelKind.SPHERE:
            return math.pi * self.size
        return self.size / 2.0

    def with_resolution(self, resolution: int) -> "ManifoldModel":
        return build_model(self.kind, self.size, resolution, self.drift_spec)

    def constant(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))

    def describe(self) -> dict:
        return {
            "kind": self.kind.value,
            "size": self.size,
            "resolution": self.resolution,
            "dimension": self.n,
            "drift": list(self.drift_spec),
            "h": self.spacing,
        }

    def __repr__(self):
        return (
            f"ManifoldModel({self.kind.value}, size={self.size:g}, "
            f"resolution={self.resolution}, drift={list(self.drift_spec)})"
        )


def _normalise_drift_spec(kind: ModelKind, drift_spec) -> tuple[str, ...]:
    dim = 1 if kind is ModelKind.CIRCLE else 2
    if drift_spec is None:
        return ("0",) * dim
    if isinstance(drift_spec, (int, float)):
        drift_spec = (str(drift_spec),)
    if isinstance(drift_spec, str):
        parts = [s.strip() for s in drift_spec.split(";")]
    else:
        parts = [str(s).strip() for s in drift_spec]
    parts = [p if p else "0" for p in parts]
    if len(parts) == 1 and dim == 2 and sp.sympify(parts[0]) == 0:
        parts = parts * 2
    if len(parts) != dim:
        raise DomainError(
            f"{kind.value} drift needs {dim} component(s), got {len(parts)}"
        )
    return tuple(parts)


def _sample_drift(kind: ModelKind, exprs: tuple[str, ...], coords, size) -> DriftField:
    names = COORDINATE_NAMES[kind]
    symbols = sp.symbols(names, real=True)
    local = dict(zip(names, symbols))
    local["pi"] = sp.pi
    try:
        parsed = [sp.sympify(e, locals=local) for e in exprs]
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise DomainError(f"cannot parse drift {exprs}: {exc}") from None
    extra = set().union(*(e.free_symbols for e in parsed)) - set(symbols)
    if extra:
        raise DomainError(f"drift uses unknown symbols {sorted(map(str, extra))}")

    if kind is ModelKind.SPHERE:
        if any(e != 0 for e in parsed):
            raise DomainError("sphere model supports only the zero drift")
        shape = coords[0].shape
        return DriftField(exprs, np.zeros((2,) + shape), np.zeros((2, 2) + shape))

    shape = coords[0].shape
    dim = len(parsed)

    def evaluate(expr, points):
        fn = sp.lambdify(symbols, expr, "numpy")
        return np.broadcast_to(np.asarray(fn(*points), dtype=float), points[0].shape).copy()

    comps = np.stack([evaluate(e, coords) for e in parsed])
    jac = np.empty((dim, dim) + shape)
    for i, s in enumerate(symbols):
        for j, e in enumerate(parsed):
            jac[i, j] = evaluate(sp.diff(e, s), coords)

    # Periodic compatibility: values and first derivatives must agree across
    # the identified edges of the fundamental domain.
    probe = np.linspace(0.0, size, 7)
    for axis, s in enumerate(symbols):
        for e in parsed:
            for expr in (e, *(sp.diff(e, t) for t in symbols)):
                fn = sp.lambdify(symbols, expr, "numpy")
                lo = [probe if k != axis else np.zeros_like(probe) for k in range(dim)]
                hi = [probe if k != axis else np.full_like(probe, size) for k in range(dim)]
                if dim == 1:
                    lo, hi = [np.zeros(1)], [np.full(1, size)]
                a = np.asarray(fn(*lo), dtype=float)
                b = np.asarray(fn(*hi), dtype=float)
                if not np.allclose(a, b, atol=1e-9, rtol=1e-9):
                    raise DomainError(
                        f"drift {e} is not periodic with period {size:g} in {s}"
                    )
    if not np.all(np.isfinite(comps)) or not np.all(np.isfinite(jac)):
        raise DomainError("drift is not finite on the grid")
    return DriftField(exprs, comps, jac)


def build_model(kind, size, resolution: int, drift_spec=None) -> ManifoldModel:
    """Construct a validated model geometry.

    ``size`` is the circumference (circle, torus) or the radius (sphere).
    ``drift_spec`` is ``None``/``"0"`` or sympy expression(s) in the model
    coordinates; torus components are separated by ``;`` or given as a pair.
    """
    kind = ModelKind.parse(kind)
    resolution = int(resolution)
    size = float(size)
    if resolution < MIN_RESOLUTION:
        raise DomainError(f"resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    if not size > 0 or not math.isfinite(size):
        raise DomainError(f"size must be positive, got {size}")
    exprs = _normalise_drift_spec(kind, drift_spec)

    N = resolution
    if kind is ModelKind.CIRCLE:
        h = size / N
        theta = np.arange(N) * h
        coords = (theta,)
        weights = np.full(N, h)
        spacing = h
    elif kind is ModelKind.TORUS:
        h = size / N
        x1 = np.arange(N) * h
        X, Y = np.meshgrid(x1, x1, indexing="ij")
        coords = (X, Y)
        weights = np.full((N, N), h * h)
        spacing = h
    else:
        h = math.pi / N
        theta = (np.arange(N) + 0.5) * h
        coords = (theta,)
        # exact band areas, so the weights sum to 4 pi r^2
        weights = 2 * math.pi * size**2 * (np.cos(theta - h / 2) - np.cos(theta + h / 2))
        spacing = size * h

    drift = _sample_drift(kind, exprs, coords, size)
    return ManifoldModel(
        kind=kind,
        size=size,
        resolution=N,
        drift=drift,
        coords=coords,
        spacing=spacing,
        weights=weights,
        drift_spec=exprs,
    )


def _values(model: ManifoldModel, field: FieldLike) -> np.ndarray:
    u = np.asarray(field.values if isinstance(field, ScalarField) else field, dtype=float)
    if u.shape != model.shape:
        if u.ndim == 0:
            return np.full(model.shape, float(u))
        raise ShapeMismatch(f"field shape {u.shape} does not match grid {model.shape}")
    return u


def _sphere_pad(u: np.ndarray) -> np.ndarray:
    # even reflection across both poles
    return np.concatenate(([u[0]], u, [u[-1]]))


def _d1(model: ManifoldModel, u: np.ndarray, axis: int = 0) -> np.ndarray:
    """Centred first difference in coordinate ``axis`` (coordinate units)."""
    if model.kind is ModelKind.SPHERE:
        up = _sphere_pad(u)
        return (up[2:] - up[:-2]) / (2 * (math.pi / model.resolution))
    h = model.spacing
    return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2 * h)


def _d2(model: ManifoldModel, u: np.ndarray, axis: int = 0) -> np.ndarray:
    """Centred second difference in coordinate ``axis`` (coordinate units)."""
    if model.kind is ModelKind.SPHERE:
        up = _sphere_pad(u)
        hh = math.pi / model.resolution
        return (up[2:] - 2 * u + up[:-2]) / (hh * hh)
    h = model.spacing
    if u.ndim == 1:
        out = -2.0 * u
        out[1:] += u[:-1]
        out[0] += u[-1]
        out[:-1] += u[1:]
        out[-1] += u[0]
        out *= 1.0 / (h * h)
        return out
    return (np.roll(u, -1, axis) - 2 * u + np.roll(u, 1, axis)) / (h * h)


def gradient(model: ManifoldModel, field: FieldLike) -> np.ndarray:
    """Frame components of the discrete gradient, shape ``(n, *grid)``."""
    u = _values(model, field)
    if model.kind is ModelKind.CIRCLE:
        return _d1(model, u)[None]
    if model.kind is ModelKind.TORUS:
        return np.stack([_d1(model, u, 0), _d1(model, u, 1)])
    return np.stack([_d1(model, u) / model.size, np.zeros_like(u)])


def gradient_inner(model: ManifoldModel, f: FieldLike, g: FieldLike) -> np.ndarray:
    """Pointwise metric inner product of the discrete gradients of f and g."""
    return np.sum(gradient(model, f) * gradient(model, g), axis=0)


def gradient_sq(model: ManifoldModel, field: FieldLike) -> np.ndarray:
    grad = gradient(model, field)
    return np.sum(grad * grad, axis=0)


def laplacian(model: ManifoldModel, field: FieldLike) -> np.ndarray:
    """Second-order discrete Laplace-Beltrami operator."""
    u = _values(model, field)
    if model.kind is ModelKind.CIRCLE:
        return _d2(model, u)
    if model.kind is ModelKind.TORUS:
        out = -4.0 * u
        out[1:] += u[:-1]
        out[0] += u[-1]
        out[:-1] += u[1:]
        out[-1] += u[0]
        out[:, 1:] += u[:, :-1]
        out[:, 0] += u[:, -1]
        out[:, :-1] += u[:, 1:]
        out[:, -1] += u[:, 0]
        out *= 1.0 / model.spacing**2
        return out
    # (1/sin) d(sin du): flux form, the pole fluxes vanish because sin(0)=sin(pi)=0
    N = model.resolution
    hh = math.pi / N
    theta = model.coords[0]
    s_face = np.sin(np.arange(N + 1) * hh)
    up = _sphere_pad(u)
    flux = s_face * (up[1:] - up[:-1])
    return (flux[1:] - flux[:-1]) / (hh * hh * np.sin(theta) * model.size**2)


def directional_derivative(model: ManifoldModel, field: FieldLike) -> np.ndarray:
    """``V u``: derivative of the field along the drift."""
    if model.drift.is_zero:
        return np.zeros(model.shape)
    grad = gradient(model, field)
    return np.sum(model.drift.components * grad, axis=0)


def drift_laplacian(model: ManifoldModel, field: FieldLike) -> np.ndarray:
    """``Delta_V u = Delta u + V u``."""
    lap = laplacian(model, field)
    if model.drift.is_zero:
        return lap
    return lap + directional_derivative(model, field)


def hessian(model: ManifoldModel, field: FieldLike) -> np.ndarray:
    """Covariant Hessian in the orthonormal frame, shape ``(n, n, *grid)``."""
    u = _values(model, field)
    if model.kind is ModelKind.CIRCLE:
        return _d2(model, u)[None, None]
    if model.kind is ModelKind.TORUS:
        uxx = _d2(model, u, 0)
        uyy = _d2(model, u, 1)
        uxy = _d1(model, _d1(model, u, 0), 1)
        return np.array([[uxx, uxy], [uxy, uyy]])
    r2 = model.size**2
    theta = model.coords[0]
    h_tt = _d2(model, u) / r2
    # nabla^2 u (e_phi, e_phi) = cot(theta) u_theta / r^2
    h_pp = _d1(model, u) / np.tan(theta) / r2
    zero = np.zeros_like(u)
    return np.array([[h_tt, zero], [zero, h_pp]])


def hessian_sq(model: ManifoldModel, field: FieldLike) -> np.ndarray:
    H = hessian(model, field)
    return np.sum(H * H, axis=(0, 1))


def hessian_traceless_sq(model: ManifoldModel, field: FieldLike) -> np.ndarray:
    """``|nabla^2 u - (tr/n) g|^2``; identically zero on the circle."""
    if model.n == 1:
        return np.zeros(model.shape)
    H = hessian(model, field)
    tr = np.trace(H, axis1=0, axis2=1)
    return np.sum(H * H, axis=(0, 1)) - tr * tr / model.n


def _check_m(model: ManifoldModel, m: float):
    if not m > model.n:
        raise DomainError(f"Bakry-Emery dimension m={m} must exceed n={model.n}")


def ricci_tensor(model: ManifoldModel) -> np.ndarray:
    """Riemannian Ricci tensor in the orthonormal frame, ``(n, n, *grid)``."""
    n = model.n
    R = np.zeros((n, n) + model.shape)
    if model.kind is ModelKind.SPHERE:
        for i in range(n):
            R[i, i] = 1.0 / model.size**2
    return R


def ricci_v_tensor(model: ManifoldModel) -> np.ndarray:
    """``Ric_V = Ric - (1/2) L_V g``."""
    J = model.drift.jacobian
    # on flat frames (L_V g)_ij = d_i V_j + d_j V_i
    return ricci_tensor(model) - 0.5 * (J + np.swapaxes(J, 0, 1))


def ricci_vm_tensor(model: ManifoldModel, m: float) -> np.ndarray:
    """``Ric_V^m = Ric_V - V (x) V / (m - n)``."""
    _check_m(model, m)
    V = model.drift.components
    return ricci_v_tensor(model) - V[:, None] * V[None, :] / (m - model.n)


def ricci_vm_pointwise(model: ManifoldModel, m: float) -> np.ndarray:
    """Smallest eigenvalue of ``Ric_V^m`` at every node."""
    T = ricci_vm_tensor(model, m)
    if model.n == 1:
        return T[0, 0].copy()
    # move the tensor indices last for eigvalsh
    mats = np.moveaxis(T, (0, 1), (-2, -1))
    return np.linalg.eigvalsh(mats)[..., 0]


def tensor_form(T: np.ndarray, X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
    """Evaluate a pointwise 2-tensor on frame vectors: ``T(X, Y)``."""
    if Y is None:
        Y = X
    return np.einsum("ij...,i...,j...->...", T, X, Y)


def curvature_lower_bound(model: ManifoldModel, m: float) -> CurvatureSpec:
    """``K = max(0, -min Ric_V^m)`` sampled on the grid."""
    lowest = float(np.min(ricci_vm_pointwise(model, m)))
    return CurvatureSpec(m=float(m), K=max(0.0, -lowest))


def integrate(model: ManifoldModel, field: FieldLike) -> float:
    return float(np.sum(model.weights * _values(model, field)))


def distance_from(model: ManifoldModel, x0=None) -> np.ndarray:
    """Geodesic distance from ``x0`` to every node.

    On the sphere ``x0`` must be a pole (``"north"``/``"south"`` or colatitude
    0/pi) since only axisymmetric fields are represented.
    """
    if model.kind is ModelKind.CIRCLE:
        c = 0.0 if x0 is None else float(np.atleast_1d(x0)[0])
        d = np.abs(model.coords[0] - c) % model.size
        return np.minimum(d, model.size - d)
    if model.kind is ModelKind.TORUS:
        c = (0.0, 0.0) if x0 is None else tuple(float(v) for v in x0)
        sq = np.zeros(model.shape)
        for axis in range(2):
            d = np.abs(model.coords[axis] - c[axis]) % model.size
            d = np.minimum(d, model.size - d)
            sq += d * d
        return np.sqrt(sq)
    if x0 is None or x0 in ("north", 0, 0.0):
        return model.size * model.coords[0]
    if x0 in ("south",) or (isinstance(x0, (int, float)) and math.isclose(x0, math.pi)):
        return model.size * (math.pi - model.coords[0])
    raise DomainError("sphere distances are available only from a pole")
