"""Demand-flexibility capacity of HVAC loads as an optimal spectral density."""

from .capacity import (
    CapacityResult,
    ConstraintMap,
    QoSSpec,
    QPProblem,
    assemble_objective,
    build_problem,
    chebyshev_bound,
    estimate_B_dd,
    estimate_B_theta,
    model_B,
    scale_ensemble,
    solve_nonlinear,
    solve_qp,
    validate,
)
from .loads import LoadSimulator, QoSChannel, ThermalParams, discretize
from .refsd import Passband, RationalSD
from .spectra import FrequencyGrid, SpectralDensity, integrate_sd, make_basis, periodogram

__all__ = [
    "CapacityResult",
    "ConstraintMap",
    "FrequencyGrid",
    "LoadSimulator",
    "Passband",
    "QPProblem",
    "QoSChannel",
    "QoSSpec",
    "RationalSD",
    "SpectralDensity",
    "ThermalParams",
    "assemble_objective",
    "build_problem",
    "chebyshev_bound",
    "discretize",
    "estimate_B_dd",
    "estimate_B_theta",
    "integrate_sd",
    "make_basis",
    "model_B",
    "periodogram",
    "scale_ensemble",
    "solve_nonlinear",
    "solve_qp",
    "validate",
]
