"""Optimal sonication control for growth-fragmentation amplification.

The package models protein amplification protocols as a controlled linear
compartment system dx/dt = u F x + v G x, where u is the sonication
intensity and v the growth modulation.  It provides:

- :mod:`pmca_control.model` — matrices, coefficient validation, rate laws;
- :mod:`pmca_control.spectral` — Perron eigenvalue machinery, maximizers
  over constant and relaxed (hull) controls, large-intensity expansions;
- :mod:`pmca_control.floquet` — periodic forcing, monodromy, and the
  second-order response of the growth exponent;
- :mod:`pmca_control.dynamics` — trajectory/adjoint propagation and
  optimality diagnostics;
- :mod:`pmca_control.dim2` — two-compartment closed forms and the explicit
  bang/singular/bang turnpike synthesis with chattering approximants;
- :mod:`pmca_control.optimize` — direct terminal-mass maximization over
  piecewise-constant controls;
- :mod:`pmca_control.cli` — the ``pmca-control`` command-line front end.
"""

from .dim2 import (
    Dim2Config,
    HorizonError,
    TurnpikeControl,
    chattering_approximation,
    closed_form_identities,
    lambda_closed,
    singular_control,
    synthesize_turnpike,
    u_minus,
)
from .dynamics import (
    ControlSignal,
    PMPReport,
    PositivityError,
    Trajectory,
    hamiltonian,
    integrate_adjoint,
    integrate_forward,
    pmp_residual,
    simulate,
    switching_function,
)
from .floquet import (
    DefectiveBasisError,
    FloquetOverflowError,
    PeriodicControl,
    SpectralBasis,
    fd_second_derivative,
    floquet_eigenvalue,
    floquet_second_derivative_formula,
    high_frequency_limit,
    monodromy,
    perron_second_derivative,
    spectral_basis,
)
from .model import (
    GrowthFragMatrices,
    ModelParams,
    ModelValidationError,
    RateFunction,
    build_matrices,
    validate,
)
from .optimize import (
    DirectProblem,
    DutyStats,
    OptimizeResult,
    duty_ratio_stats,
    objective_gradient,
    optimize_direct,
)
from .spectral import (
    EigenConvergenceError,
    PerronTriple,
    StringParams,
    expansion_check,
    maximize_perron_constant,
    maximize_perron_hull,
    perron_gradient,
    perron_triple,
    string_params,
)

__version__ = "0.1.0"

__all__ = [
    "ControlSignal",
    "DefectiveBasisError",
    "Dim2Config",
    "DirectProblem",
    "DutyStats",
    "EigenConvergenceError",
    "FloquetOverflowError",
    "GrowthFragMatrices",
    "HorizonError",
    "ModelParams",
    "ModelValidationError",
    "OptimizeResult",
    "PMPReport",
    "PerronTriple",
    "PeriodicControl",
    "PositivityError",
    "RateFunction",
    "SpectralBasis",
    "StringParams",
    "Trajectory",
    "TurnpikeControl",
    "build_matrices",
    "chattering_approximation",
    "closed_form_identities",
    "duty_ratio_stats",
    "expansion_check",
    "fd_second_derivative",
    "floquet_eigenvalue",
    "floquet_second_derivative_formula",
    "hamiltonian",
    "high_frequency_limit",
    "integrate_adjoint",
    "integrate_forward",
    "lambda_closed",
    "maximize_perron_constant",
    "maximize_perron_hull",
    "monodromy",
    "objective_gradient",
    "optimize_direct",
    "perron_gradient",
    "perron_second_derivative",
    "perron_triple",
    "pmp_residual",
    "simulate",
    "singular_control",
    "spectral_basis",
    "string_params",
    "switching_function",
    "synthesize_turnpike",
    "u_minus",
    "validate",
]
