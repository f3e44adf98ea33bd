"""Robust distributed Kalman prediction with a diffusion step.

Centralized robust predictor, its network version (incremental step plus
diffusion), the least favorable model and its exact mean square deviation
analysis, a Monte-Carlo harness and an experiment runner.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .model import (
    GlobalModel,
    LocalModel,
    ModelError,
    NodeModel,
    SensorNetwork,
    build_diffusion_weights,
    build_global_model,
    build_local_model,
    build_local_models,
    validate_weights,
)
from .robust_core import (
    RobustFilterState,
    gamma,
    inflate,
    robust_predict_step,
    solve_theta,
    steady_state,
)
from .distributed import NetworkFilterState, dkf_step, node_schedule
from .least_favorable import LeastFavorableModel, synthesize
from .performance import gaussian_kl, kl_comparison, lf_performance

__all__ = [
    "BACKEND",
    "GlobalModel", "LocalModel", "ModelError", "NodeModel", "SensorNetwork",
    "build_diffusion_weights", "build_global_model", "build_local_model", "build_local_models",
    "validate_weights",
    "RobustFilterState", "gamma", "inflate", "robust_predict_step", "solve_theta", "steady_state",
    "NetworkFilterState", "dkf_step", "node_schedule",
    "LeastFavorableModel", "synthesize",
    "gaussian_kl", "kl_comparison", "lf_performance",
]
