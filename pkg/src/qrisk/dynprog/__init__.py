"""Backward dynamic programming for the two-level atom."""

from .control import ControlValue, grad_w, optimal_u, optimal_u_rn, optimal_u_rs
from .generator import Cylindrical, GeneratorEstimate, analytic_generator, generator_oracle
from .grid import RISK_NEUTRAL, RISK_SENSITIVE, DPConfig, Lattice, Policy, ValueGrid, control_grid, terminal_values
from .solver import SolverError, backward_solve, max_stable_dt, rn_backward_solve, rs_backward_solve

__all__ = [
    "ControlValue", "Cylindrical", "DPConfig", "GeneratorEstimate", "Lattice", "Policy", "RISK_NEUTRAL",
    "RISK_SENSITIVE", "SolverError", "ValueGrid", "analytic_generator", "backward_solve", "control_grid",
    "generator_oracle", "grad_w", "max_stable_dt", "optimal_u", "optimal_u_rn", "optimal_u_rs",
    "rn_backward_solve", "rs_backward_solve", "terminal_values",
]
