"""Equilibrated a posteriori error estimation for time-harmonic Maxwell."""

import json

from ._core import (
    EqmaxError,
    Topology,
    ExactSolution,
    PrimalSolution,
    Equilibration,
    structured_cube,
    load_gmsh,
    manufactured_solution,
    solve_maxwell,
    equilibrate,
    verify_equilibration,
    local_estimators,
    energy_error,
    solve_constrained_ls,
    compute_rates,
)
from ._core import run_study as _run_study


def run_study(config):
    """Runs a convergence study; `config` is a dict or a JSON string."""
    return _run_study(config if isinstance(config, str) else json.dumps(config))


__all__ = [
    "EqmaxError",
    "Topology",
    "ExactSolution",
    "PrimalSolution",
    "Equilibration",
    "structured_cube",
    "load_gmsh",
    "manufactured_solution",
    "solve_maxwell",
    "equilibrate",
    "verify_equilibration",
    "local_estimators",
    "energy_error",
    "solve_constrained_ls",
    "run_study",
    "compute_rates",
]
