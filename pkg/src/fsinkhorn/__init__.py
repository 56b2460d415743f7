"""Optimal transport regularized by f-divergences on discrete measures.

The solver alternates Newton-computed (c, eps, phi)-transforms of the dual
potentials; see :func:`fsinkhorn.sinkhorn.solve`.
"""
from .divergence import DIVERGENCES, DivergenceSpec, get_divergence, lambert_w, primal_generator_value
from .measures import CostMatrix, DiscreteMeasure, build_cost, generate_dataset, load_csv, save_csv
from .sinkhorn import (
    Coupling,
    NewtonConfig,
    Potentials,
    PrecisionError,
    ProblemInstance,
    SinkhornError,
    SolveReport,
    dual_value,
    loss_and_gradient,
    primal_value,
    solve,
    sparsity,
    tune_epsilon,
)
from .transform import GammaProblem, GammaResult, gamma_gradient, solve_gamma

__version__ = "0.1.0"

__all__ = [
    "DIVERGENCES",
    "DivergenceSpec",
    "get_divergence",
    "lambert_w",
    "primal_generator_value",
    "CostMatrix",
    "DiscreteMeasure",
    "build_cost",
    "generate_dataset",
    "load_csv",
    "save_csv",
    "Coupling",
    "NewtonConfig",
    "Potentials",
    "PrecisionError",
    "ProblemInstance",
    "SinkhornError",
    "SolveReport",
    "dual_value",
    "loss_and_gradient",
    "primal_value",
    "solve",
    "sparsity",
    "tune_epsilon",
    "GammaProblem",
    "GammaResult",
    "gamma_gradient",
    "solve_gamma",
]
