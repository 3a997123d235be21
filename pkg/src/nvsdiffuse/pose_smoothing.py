"""Smoothing of noisy per-frame camera trajectories toward keyframe anchors.

Each view's centers and angle-axis rotation vectors are pulled toward their
observed values and toward their neighbours within +-3 frames, with Gaussian
weights on the frame offset. Anchor frames (every ``kappa``-th by default) are
held fixed. Centers and rotation vectors give two independent linear least
squares problems that share one normal matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import LengthMismatch, SingularSystem
from .geometry import CameraPose, angle_axis_to_rotation, rotation_angle, rotation_to_angle_axis

logger = logging.getLogger(__name__)

WINDOW = 3


@dataclass
class TrajectoryProblem:
    """Observed poses of one view plus the fixed anchor poses.

    ``smoothing_weight`` scales every neighbour term; at 0 the input is returned
    untouched.
    """

    observed: list[CameraPose]
    anchors: dict[int, CameraPose]
    window_sigma: float = 1.5
    data_weight: float = 1.0
    smoothing_weight: float = 1.0

    def __post_init__(self):
        T = len(self.observed)
        bad = [i for i in self.anchors if not 0 <= i < T]
        if bad:
            raise ValueError(f"anchor indices {bad} outside [0, {T})")
        if self.window_sigma <= 0 or self.data_weight < 0 or self.smoothing_weight < 0:
            raise ValueError("window_sigma must be > 0 and weights >= 0")


def keyframe_anchors(poses: list[CameraPose], kappa: int = 20) -> dict[int, CameraPose]:
    return {t: poses[t] for t in range(0, len(poses), kappa)}


def window_weight(offset, sigma: float):
    return np.exp(-np.asarray(offset, dtype=np.float64) ** 2 / (2.0 * sigma**2))


def unwrap_angle_axis(vectors: np.ndarray) -> np.ndarray:
    """Choose, frame by frame, the 2*pi-equivalent rotation vector closest to the previous one."""
    out = np.array(vectors, dtype=np.float64).reshape(-1, 3)
    for t in range(1, len(out)):
        out[t] = closest_equivalent(out[t], out[t - 1])
    return out


def closest_equivalent(a: np.ndarray, ref: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(a)
    if theta < 1e-12:
        axis = ref / np.linalg.norm(ref) if np.linalg.norm(ref) > 1e-12 else np.array([0.0, 0.0, 1.0])
        cands = [a, 2 * np.pi * axis, -2 * np.pi * axis]
    else:
        axis = a / theta
        cands = [a + 2 * np.pi * k * axis for k in (-1, 0, 1)]
    return min(cands, key=lambda c: float(np.sum((c - ref) ** 2)))


def _pairs(T: int, sigma: float):
    """Unordered neighbour pairs ``(i, j, w)`` with ``0 < j - i <= WINDOW``."""
    out = []
    for k in range(1, WINDOW + 1):
        i = np.arange(T - k)
        out.append((i, i + k, np.full(T - k, window_weight(k, sigma))))
    return tuple(np.concatenate(x) for x in zip(*out)) if out else (np.array([]),) * 3


def normal_matrix(T: int, data_weight: float, pair_weight: float, sigma: float) -> sp.csr_matrix:
    """Hessian/2 of the objective: ``data_weight * I + 2 * L`` with ``L`` the window Laplacian.

    Each unordered pair is counted twice in the objective (once from either end).
    """
    i, j, w = _pairs(T, sigma)
    w = 2.0 * pair_weight * w
    L = sp.coo_matrix((np.concatenate([-w, -w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(T, T))
    L = L.tocsr()
    L = L + sp.diags(-np.asarray(L.sum(axis=1)).ravel())
    return (L + sp.diags(np.full(T, data_weight))).tocsr()


def objective(centers: np.ndarray, rotvecs: np.ndarray, problem: TrajectoryProblem, obs=None) -> float:
    """Smoothing objective for given centers ``(T, 3)`` and rotation vectors ``(T, 3)``."""
    oc, oa = _observed(problem) if obs is None else obs
    T = len(centers)
    total = problem.data_weight * (np.sum((centers - oc) ** 2) + np.sum((rotvecs - oa) ** 2))
    i, j, w = _pairs(T, problem.window_sigma)
    pair = np.sum((centers[i] - centers[j]) ** 2, axis=1) + np.sum((rotvecs[i] - rotvecs[j]) ** 2, axis=1)
    return float(total + 2.0 * problem.smoothing_weight * np.sum(w * pair))


def gradient(centers, rotvecs, problem: TrajectoryProblem, obs=None) -> np.ndarray:
    """Gradient ``(T, 6)`` of :func:`objective` with anchor rows zeroed."""
    oc, oa = _observed(problem) if obs is None else obs
    H = normal_matrix(len(centers), problem.data_weight, problem.smoothing_weight, problem.window_sigma)
    X = np.hstack([centers, rotvecs])
    O = np.hstack([oc, oa])
    g = 2.0 * (H @ X - problem.data_weight * O)
    g[list(problem.anchors)] = 0.0
    return g


def _observed(problem: TrajectoryProblem):
    oc = np.array([p.C for p in problem.observed])
    oa = unwrap_angle_axis(np.array([rotation_to_angle_axis(p.R) for p in problem.observed]))
    return oc, oa


def _anchor_values(problem: TrajectoryProblem, oa: np.ndarray):
    idx = np.array(sorted(problem.anchors), dtype=np.int64)
    ac = np.array([problem.anchors[t].C for t in idx]).reshape(-1, 3)
    aa = np.array(
        [closest_equivalent(rotation_to_angle_axis(problem.anchors[t].R), oa[t]) for t in idx]
    ).reshape(-1, 3)
    return idx, ac, aa


def solve_trajectory(problem: TrajectoryProblem) -> tuple[np.ndarray, np.ndarray]:
    """Optimal centers and (unwrapped) rotation vectors, each ``(T, 3)``."""
    T = len(problem.observed)
    if T < 2:
        raise ValueError("need at least two poses")
    oc, oa = _observed(problem)
    idx, ac, aa = _anchor_values(problem, oa)
    free = np.setdiff1d(np.arange(T), idx)
    X = np.hstack([oc, oa])
    X[idx] = np.hstack([ac, aa])
    if len(free) == 0:
        return X[:, :3], X[:, 3:]
    if problem.data_weight <= 0 and len(idx) == 0:
        raise SingularSystem("without a data term at least one anchor is required")
    H = normal_matrix(T, problem.data_weight, problem.smoothing_weight, problem.window_sigma)
    rhs = problem.data_weight * np.hstack([oc, oa])[free] - H[free][:, idx] @ X[idx]
    X[free] = sla.spsolve(H[free][:, free].tocsc(), rhs).reshape(len(free), 6)
    return X[:, :3], X[:, 3:]


def smooth_trajectory(problem: TrajectoryProblem) -> list[CameraPose]:
    """Return the smoothed poses (intrinsics and indices copied from the observations)."""
    if problem.smoothing_weight == 0 and not problem.anchors:
        return list(problem.observed)
    centers, rotvecs = solve_trajectory(problem)
    out = []
    for t, p in enumerate(problem.observed):
        if problem.smoothing_weight == 0 and t not in problem.anchors:
            out.append(p)
            continue
        out.append(p.replace(R=angle_axis_to_rotation(rotvecs[t]), C=centers[t]))
    return out


def trajectory_errors(estimate: list[CameraPose], ground_truth: list[CameraPose]) -> tuple[float, float]:
    """Mean center distance and mean orientation error in degrees.

    Raises:
        LengthMismatch: if the trajectories differ in length.
    """
    if len(estimate) != len(ground_truth):
        raise LengthMismatch(f"{len(estimate)} estimated poses vs {len(ground_truth)} ground-truth poses")
    if not estimate:
        return 0.0, 0.0
    pos = [np.linalg.norm(e.C - g.C) for e, g in zip(estimate, ground_truth)]
    ang = [np.degrees(rotation_angle(e.R @ g.R.T)) for e, g in zip(estimate, ground_truth)]
    return float(np.mean(pos)), float(np.mean(ang))
