"""Variational depth/color diffusion for one novel frame."""

from .energy import color_energy, depth_energy, eval_energy
from .pcg import PCGInfo, pcg
from .solve import (
    AlternateResult,
    FrameInputs,
    FrameProblem,
    FrameSolution,
    SolveStats,
    WarpedSources,
    alternate_solve,
    build_level_problem,
    color_system,
    compute_weights,
    depth_system,
    harmonic_infill,
    initial_estimates,
    multiscale_solve,
    solve_color,
    solve_depth,
    splat_pyramid,
)
from .weights import WeightMaps, compute_w_D, compute_w_hat_D, compute_w_P, compute_w_T

__all__ = [
    "AlternateResult",
    "FrameInputs",
    "FrameProblem",
    "FrameSolution",
    "PCGInfo",
    "SolveStats",
    "WarpedSources",
    "WeightMaps",
    "alternate_solve",
    "build_level_problem",
    "color_energy",
    "color_system",
    "compute_w_D",
    "compute_w_P",
    "compute_w_T",
    "compute_w_hat_D",
    "compute_weights",
    "depth_energy",
    "depth_system",
    "eval_energy",
    "harmonic_infill",
    "initial_estimates",
    "multiscale_solve",
    "pcg",
    "solve_color",
    "solve_depth",
    "splat_pyramid",
]
