"""Minimum probability of lifetime ruin: HJB solver, dual stopping game, and Monte Carlo checks."""
from .curves import Grid, PolicyCurve, ValueCurve
from .duality import biconjugate_check, legendre_concave
from .fbp_dual import DualSolution, alpha_star, solve_dual
from .mc_sim import SimConfig, SimResult, saddle_test, simulate_game, simulate_ruin, simulate_ruin_2d
from .model import REFERENCE, MarketParams, ParameterError, Params, derive_params, validate
from .pde_primal import feedback_policy, lift_2d, solve_primal, solve_unbounded

__all__ = [
    "DualSolution", "Grid", "MarketParams", "ParameterError", "Params", "PolicyCurve", "REFERENCE",
    "SimConfig", "SimResult", "ValueCurve", "alpha_star", "biconjugate_check", "derive_params",
    "feedback_policy", "legendre_concave", "lift_2d", "saddle_test", "simulate_game",
    "simulate_ruin", "simulate_ruin_2d", "solve_dual", "solve_primal", "solve_unbounded",
    "validate",
]
