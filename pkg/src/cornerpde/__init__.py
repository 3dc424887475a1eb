"""Numerical workbench for parabolic problems on corner domains.

Operator-pencil spectra and admissible weight intervals, Rothe-method
linear and semilinear solves on structured corner meshes, weighted-norm
evaluation, and adaptive-vs-uniform approximation diagnostics.
"""

from .calculus import (
    ExtendedSignal,
    FaaTuple,
    JunctionReport,
    ReflectionCoefficients,
    default_lambdas,
    derivative_of_power,
    discrete_hk_norm,
    extend_signal,
    faa_di_bruno_tuples,
    junction_mismatch,
    reflection_coefficients,
)
from .domain import (
    FieldSnapshot,
    Mesh,
    PolygonalDomain,
    WeightFunction,
    grading_breakpoints,
    make_l_shape,
    make_sector,
    make_square,
    mesh_graded,
    mesh_uniform,
    nominal_spacing,
    p1_evaluate,
    prolong,
    prolong_to,
    read_mesh_csv,
    refine,
    rho,
    write_mesh_csv,
    write_vtk,
)
from .errors import (
    EXIT_NONCONVERGENCE,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_VALIDATION,
    NonConvergenceError,
    NumericError,
    ValidationError,
)
from .experiment import (
    ExperimentConfig,
    RunReport,
    dumps_json,
    preset,
    presets,
    resolve_output_root,
    run_experiment,
)
from .pde import (
    IterationLog,
    Operators,
    ParabolicProblem,
    SemilinearConfig,
    SmallnessResult,
    Trajectory,
    assemble,
    data_norm,
    estimate_operator_norm,
    operator_norm_from_operators,
    smallness_check,
    solution_norm,
    resolve_semilinear_config,
    solve_linear,
    solve_semilinear,
)
from .pencil import (
    PencilSpectrum,
    StripWidths,
    WeightInterval,
    admissible_weights,
    heat_weight_bound,
    laplace_pencil_closed_form,
    pencil_eigenvalues_numeric,
    strip_delta,
)
from .smoothness import (
    BesovResult,
    EmbeddingParams,
    EmbeddingReport,
    HierarchicalCoefficients,
    KondratievParams,
    SmoothnessReport,
    adaptivity_tau,
    besov_norm_moduli,
    best_n_term,
    embedding_check,
    estimate_rates,
    cross_family_l2_errors,
    fit_loglog,
    galerkin_energy_errors,
    gamma_from_tau,
    hierarchical_coefficients,
    kondratiev_norm,
    l2_error_against,
    nterm_error_sweep,
    self_convergence_errors,
    sobolev_norm,
    surplus_reconstruct,
)

__version__ = "0.1.0"

__all__ = [
    "BesovResult", "EmbeddingParams", "EmbeddingReport", "ExperimentConfig",
    "ExtendedSignal", "FaaTuple", "FieldSnapshot", "HierarchicalCoefficients",
    "IterationLog", "JunctionReport", "KondratievParams", "Mesh",
    "NonConvergenceError", "NumericError", "Operators", "ParabolicProblem",
    "PencilSpectrum", "PolygonalDomain", "ReflectionCoefficients", "RunReport",
    "SemilinearConfig", "SmallnessResult", "SmoothnessReport", "StripWidths",
    "Trajectory", "ValidationError", "WeightFunction", "WeightInterval",
    "EXIT_NONCONVERGENCE", "EXIT_NUMERIC", "EXIT_OK", "EXIT_VALIDATION",
    "adaptivity_tau", "admissible_weights", "assemble", "besov_norm_moduli",
    "best_n_term", "cross_family_l2_errors", "data_norm", "default_lambdas",
    "derivative_of_power", "discrete_hk_norm", "dumps_json", "embedding_check",
    "estimate_operator_norm", "estimate_rates", "extend_signal",
    "faa_di_bruno_tuples", "fit_loglog", "galerkin_energy_errors",
    "gamma_from_tau", "grading_breakpoints", "heat_weight_bound",
    "hierarchical_coefficients", "junction_mismatch", "kondratiev_norm",
    "l2_error_against", "laplace_pencil_closed_form", "make_l_shape",
    "make_sector", "make_square", "mesh_graded", "mesh_uniform",
    "nominal_spacing", "nterm_error_sweep", "operator_norm_from_operators",
    "p1_evaluate", "pencil_eigenvalues_numeric", "preset", "presets",
    "prolong", "prolong_to", "read_mesh_csv", "refine",
    "reflection_coefficients", "resolve_output_root",
    "resolve_semilinear_config", "rho", "run_experiment",
    "self_convergence_errors", "smallness_check", "sobolev_norm",
    "solution_norm", "solve_linear", "solve_semilinear", "strip_delta",
    "surplus_reconstruct", "write_mesh_csv", "write_vtk",
]
