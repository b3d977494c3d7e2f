"""Filter-kernel distances, belief-grid solvers and robustness-bound certification
for finite POMDPs."""

from .belief import (
    BeliefGrid,
    belief_grid,
    belief_update,
    filter_kernel_at,
    filter_kernel_distance,
    obs_predictive,
    predictive_tv_gap,
)
from .bounds import BOUND_IDS, BoundReport, BoundSpec, certify, evaluate_bound
from .formats import dump_model, load_model, load_scenario
from .metrics import bl_distance, channel_distance, dobrushin, kernel_distance, tv_distance, w1_distance
from .model import FiniteMetricSpace, ModelConstants, PomdpModel, derive_constants, validate_model

__version__ = "0.1.0"

__all__ = [
    "BOUND_IDS",
    "BeliefGrid",
    "BoundReport",
    "BoundSpec",
    "FiniteMetricSpace",
    "ModelConstants",
    "PomdpModel",
    "belief_grid",
    "belief_update",
    "bl_distance",
    "certify",
    "channel_distance",
    "derive_constants",
    "dobrushin",
    "dump_model",
    "evaluate_bound",
    "filter_kernel_at",
    "filter_kernel_distance",
    "kernel_distance",
    "load_model",
    "load_scenario",
    "obs_predictive",
    "predictive_tv_gap",
    "tv_distance",
    "validate_model",
    "w1_distance",
]
