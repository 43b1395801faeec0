"""Mixed C0 finite elements for the p-Bilaplacian with Dirichlet data."""

from .analysis import (
    EocTable,
    ManufacturedCase,
    continuation_diagnostics,
    cosine_2d_case,
    cubic_1d_case,
    eoc,
    manufactured_sine,
    stability_margin,
)
from .assembly import ProblemSpec, SaddleProblem, assemble_saddle_system
from .mesh import Mesh, criss_cross_mesh, metrics, refine_uniform, unit_interval_mesh
from .solver import (
    ContinuationConfig,
    ContinuationError,
    NewtonConfig,
    SolverError,
    continuation_solve,
    solve_p_bilaplacian,
)
from .space import FeFunction, FeSpace, build_space, interpolate, ritz_project

__all__ = [
    "ContinuationConfig", "ContinuationError", "EocTable", "FeFunction", "FeSpace",
    "ManufacturedCase", "Mesh", "NewtonConfig", "ProblemSpec", "SaddleProblem", "SolverError",
    "assemble_saddle_system", "build_space", "continuation_diagnostics", "continuation_solve",
    "cosine_2d_case", "criss_cross_mesh", "cubic_1d_case", "eoc", "interpolate",
    "manufactured_sine", "metrics", "refine_uniform", "ritz_project", "solve_p_bilaplacian",
    "stability_margin", "unit_interval_mesh",
]
