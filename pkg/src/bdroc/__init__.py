"""Episodic Bayesian distributionally robust optimal control.

Solver library and experiment CLI: Dirichlet posterior learning over a
finite disturbance support, posterior-credible box ambiguity sets, the exact
mean-CVaR reformulation of the worst-case Bellman operator, a cutting-plane
solver with episodic warm starts, and the inventory-control experiment
batteries.
"""

from .bocp import BocpConfig, BocpState, floor_pool, master_solve, residual, run, warm_start_filter
from .dist import (
    BoxAmbiguity,
    DirichletPosterior,
    Pmf,
    Support,
    credible_box,
    posterior_mean,
    posterior_mode,
    posterior_update,
)
from .episodic import MethodKind, run_episodic
from .model import InventoryParams, ScenarioModel, build_inventory, discretize_exponential
from .risk import RiskSpec, cvar_discrete, rho, risk_spec, worst_case_expectation_greedy
from .value import Cut, CutPool, GridValue, bellman_apply, value_iteration_oracle

__version__ = "0.1.0"
