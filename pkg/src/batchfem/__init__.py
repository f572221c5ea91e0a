"""Differentiable finite-element assembly with pluggable sparse solver backends."""
from .mesh import DirichletSpec, Mesh, benchmark_bcs, generate_two_phase_mesh, refine_series
from .element import Material, Model, default_materials
from .krylov import PC, Method, SolverConfig, SolveReport
from .backend import OperatorKind
from .newton import NewtonConfig, NewtonReport, load_stepping, solve_bvp

__version__ = "0.1.0"

__all__ = [
    "DirichletSpec",
    "Mesh",
    "benchmark_bcs",
    "generate_two_phase_mesh",
    "refine_series",
    "Material",
    "Model",
    "default_materials",
    "PC",
    "Method",
    "SolverConfig",
    "SolveReport",
    "OperatorKind",
    "NewtonConfig",
    "NewtonReport",
    "load_stepping",
    "solve_bvp",
]
