"""Spectral quasi-Newton solver for quasi-periodic equilibria of resonant
Frenkel-Kontorova models, with perturbative-series and dense-oracle
validation."""

from .cohomology import (
    GOLDEN_MEAN,
    Frequency,
    diophantine_constant,
    diophantine_details,
    solve_constant_cohomology,
)
from .fields import AnalyticNormCertificate, SpectralField, multiply
from .lindstedt import (
    PerturbativeSeries,
    SymmetryReport,
    check_symmetry,
    evaluate_series,
    expand_series,
    truncation_residual,
)
from .model import (
    ModelConfig,
    NondegeneracyReport,
    NondegeneracyThresholds,
    Potential,
    PotentialTerms,
    SolverState,
    check_nondegeneracy,
    equilibrium_residual,
    eval_potential_terms,
    factorization_residual,
)
from .oracle import (
    OracleComparison,
    allowance_check,
    compare_solvers,
    dense_linearized_solve,
    dense_twisted_solve,
)
from .solver import (
    NewtonUpdate,
    StepReport,
    UniquenessReport,
    build_factors,
    newton_step,
    quadratic_slope,
    residual_sequence,
    residuals,
    run_kam,
    solve_AG,
    solve_BD,
    solve_sigma_c,
    uniqueness_probe,
)
from .twisted import (
    TwistedFactorization,
    TwistedOperator,
    TwistedSolution,
    factor_coefficient,
    solve_constant_twisted,
    solve_twisted,
)

__all__ = [
    "GOLDEN_MEAN",
    "AnalyticNormCertificate",
    "Frequency",
    "ModelConfig",
    "NewtonUpdate",
    "NondegeneracyReport",
    "NondegeneracyThresholds",
    "OracleComparison",
    "PerturbativeSeries",
    "Potential",
    "PotentialTerms",
    "SolverState",
    "SpectralField",
    "StepReport",
    "SymmetryReport",
    "TwistedFactorization",
    "TwistedOperator",
    "TwistedSolution",
    "UniquenessReport",
    "allowance_check",
    "build_factors",
    "check_nondegeneracy",
    "check_symmetry",
    "compare_solvers",
    "dense_linearized_solve",
    "dense_twisted_solve",
    "diophantine_constant",
    "diophantine_details",
    "equilibrium_residual",
    "eval_potential_terms",
    "evaluate_series",
    "expand_series",
    "factor_coefficient",
    "factorization_residual",
    "multiply",
    "newton_step",
    "quadratic_slope",
    "residual_sequence",
    "residuals",
    "run_kam",
    "solve_AG",
    "solve_BD",
    "solve_constant_cohomology",
    "solve_constant_twisted",
    "solve_sigma_c",
    "solve_twisted",
    "truncation_residual",
    "uniqueness_probe",
]
