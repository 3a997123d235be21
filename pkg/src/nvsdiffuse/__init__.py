"""Temporally consistent novel-view RGB-D video from sparse point clouds.

Depth and color of each virtual frame are found by alternating two weighted
diffusion (screened Poisson) solves, seeded by the sparse points splatted into
the virtual camera and by input frames warped through the current depth.
"""

from .dataset_io import (
    CameraPath,
    FrameSet,
    RenderedFrame,
    SolverParams,
    TimestepPointCloud,
    load_dataset,
)
from .geometry import CameraPose
from .pipeline import Metrics, ablate, compute_metrics, rank_views, render_sequence

__version__ = "0.1.0"

__all__ = [
    "CameraPath",
    "CameraPose",
    "FrameSet",
    "Metrics",
    "RenderedFrame",
    "SolverParams",
    "TimestepPointCloud",
    "ablate",
    "compute_metrics",
    "load_dataset",
    "rank_views",
    "render_sequence",
]
