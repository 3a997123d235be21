"""Shared builders for small randomized solver problems, and the acceptance summary."""

from __future__ import annotations

import warnings

import numpy as np
import pytest

from nvsdiffuse.dataset_io import SolverParams
from nvsdiffuse.diffusion import FrameInputs, build_level_problem, compute_weights
from nvsdiffuse.geometry import unproject_depth_map
from nvsdiffuse.grid import build_sparse_pyramid
from nvsdiffuse.pipeline import frame_inputs
from nvsdiffuse.synthetic import SceneSpec, make_synthetic

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def small_spec(rng: np.random.Generator, width=32, height=24, **kw) -> SceneSpec:
    """A randomized low-resolution variant of the moving-box scene."""
    base = dict(
        width=width,
        height=height,
        focal=width * 0.85,
        n_frames=2,
        n_views=int(rng.integers(2, 6)),
        virtual_deg=float(rng.uniform(-25, 25)),
        box_center=(float(rng.uniform(-0.8, 0.4)), float(rng.uniform(-0.3, 0.5)), float(rng.uniform(2.5, 3.5))),
        density=float(rng.uniform(0.05, 0.4)),
        depth_noise=float(rng.uniform(0, 0.05)),
        outlier_fraction=float(rng.uniform(0, 0.1)),
    )
    base.update(kw)
    return SceneSpec(**base)


def random_params(rng: np.random.Generator, **kw) -> SolverParams:
    base = dict(
        lambda_pc=float(rng.uniform(0.25, 2)),
        lambda_t=float(rng.uniform(0.01, 0.1)),
        lambda_p=float(rng.uniform(5, 20)),
        lambda_g=float(rng.uniform(5, 20)),
        pyramid_levels=1,
    )
    base.update(kw)
    return SolverParams(**base)


def random_problem(rng: np.random.Generator, width=32, height=24, temporal=True, params=None):
    """A single-level problem at frame 1 of a random scene, with random D and I.

    The previous frame is the ground truth of frame 0 (perturbed), so temporal
    terms are active when ``temporal``.
    """
    spec = small_spec(rng, width, height)
    data = make_synthetic(spec, seed=int(rng.integers(1 << 30)))
    params = params or random_params(rng)
    t = 1
    prev = None
    if temporal:
        g0 = data.ground_truth[0]
        depth = g0.depth * (1 + 0.02 * rng.standard_normal(g0.depth.shape))
        color = np.clip(g0.color + 0.05 * rng.standard_normal(g0.color.shape), 0, 1)
        prev = (data.path[0], type(g0)(0, color, depth))
    inputs, _ = frame_inputs(data.frameset, data.clouds[t], data.path[t], t, params, prev)
    pyr = [build_sparse_pyramid(img, 1)[0] for img, _ in inputs.sources]
    problem = build_level_problem(inputs, params, 0, pyr)
    D = 2.0 + 4.0 * rng.random(problem.shape)
    I = rng.random(problem.shape + (3,))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        weights = compute_weights(problem, I, problem.warp(D))
    return problem, weights, D, I


def problem_inputs(data, t=0, params=None, previous=None) -> FrameInputs:
    inputs, _ = frame_inputs(data.frameset, data.clouds[t], data.path[t], t, params or data.params, previous)
    return inputs


def world_points(cam, depth):
    return unproject_depth_map(cam, depth).reshape(-1, 3)
