"""Hierarchical clustering through non-trivial ultrametrics: layered LP relaxation, sphere-growing
rounding, tree assembly, exact oracles for small inputs, and the usual baselines."""

from __future__ import annotations

__version__ = "0.1.0"

from .core import (
    LINEAR,
    CostScaler,
    HierTree,
    InvalidInput,
    NontrivialityError,
    SimilarityMatrix,
    Ultrametric,
    apply_scaler,
    build_tree,
    check_nontrivial,
    induced_ultrametric,
    normalized_cost,
    scaler,
    tree_cost,
    tree_cost_f,
)
from .lp import LayeredSolution, solve_relaxation
from .pipeline import RunConfig, run_pipeline
from .rounding import assemble_layers, round_layers

__all__ = [
    "LINEAR",
    "CostScaler",
    "HierTree",
    "InvalidInput",
    "LayeredSolution",
    "NontrivialityError",
    "RunConfig",
    "SimilarityMatrix",
    "Ultrametric",
    "apply_scaler",
    "assemble_layers",
    "build_tree",
    "check_nontrivial",
    "induced_ultrametric",
    "normalized_cost",
    "round_layers",
    "run_pipeline",
    "scaler",
    "solve_relaxation",
    "tree_cost",
    "tree_cost_f",
]
