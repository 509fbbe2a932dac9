"""Lossy multi-processor approximate message passing.

State evolution, rate-distortion models, a dynamic program for per-iteration
coding rates, Pareto analysis of (iterations, aggregate rate, MSE), a Monte
Carlo simulator and a multi-worker harness.
"""

__version__ = "0.1.0"

from .dpopt import CodingRateSchedule, CostModel, DpGrids, build_policy, optimize, recover_schedule, schedule_cost
from .model import Prior, denoise, denoise_derivative, sample_signal
from .sevo import ProblemParams, StateTrajectory, mmse, mse_of_denoiser, se_step, se_trajectory

__all__ = [
    "__version__",
    "Prior",
    "denoise",
    "denoise_derivative",
    "sample_signal",
    "ProblemParams",
    "StateTrajectory",
    "mse_of_denoiser",
    "se_step",
    "se_trajectory",
    "mmse",
    "CostModel",
    "DpGrids",
    "CodingRateSchedule",
    "build_policy",
    "recover_schedule",
    "schedule_cost",
    "optimize",
]
