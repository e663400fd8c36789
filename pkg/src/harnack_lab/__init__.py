"""Numerical laboratory for differential Harnack estimates of

    u_t = Delta_V u + a u + b u^p,   a >= 0, b <= 0, p > 1,

on a circle, a flat torus and an axisymmetric round sphere.
"""

from harnack_lab.errors import *  # noqa: F401,F403
from harnack_lab.geometry import (
    CurvatureSpec,
    DriftField,
    ManifoldModel,
    ModelKind,
    ScalarField,
    build_model,
    curvature_lower_bound,
    distance_from,
    drift_laplacian,
    gradient,
    hessian,
    laplacian,
    ricci_vm_tensor,
)
from harnack_lab.solver import (
    EquationParams,
    SolveConfig,
    Trajectory,
    manufactured_problem,
    manufactured_residual,
    rhs,
    solve_elliptic,
    solve_parabolic,
)
from harnack_lab.harnack import (
    ConstraintReport,
    HarnackParams,
    Regime,
    cutoff_phi,
    cutoff_verify,
    dg_case2_params,
    feasibility_search,
    harnack_quantity,
    l_threshold,
    lemma_kl_residual,
    lemma_kl_terms,
    verify_harnack,
)
from harnack_lab.asymptotics import (
    check_liouville_suite,
    fit_exponential_rate,
    fit_power_exponent,
    ode_closed_form,
    ode_comparison_w,
)
from harnack_lab.cli import ExperimentConfig, RunReport, list_presets, parse_config, run_experiment

__version__ = "0.1.0"
