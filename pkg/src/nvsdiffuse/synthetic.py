"""Analytic test scenes: textured planes and a moving textured box.

The same ray caster produces the input frames, the held-out ground truth for
the virtual path, and the sparse per-timestep point clouds, so every quantity
has an exact reference.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset_io import (
    CameraPath,
    FrameSet,
    RenderedFrame,
    SolverParams,
    TimestepPointCloud,
    save_dataset,
    save_frame,
)
from .errors import IoFailure
from .geometry import CameraPose, look_at, make_intrinsics, pixel_grid, unproject_points

logger = logging.getLogger(__name__)


@dataclass
class SceneSpec:
    """Parameters of a synthetic capture.

    Input cameras sit on a horizontal arc of ``radius`` around ``target``,
    spread over ``baseline_deg``. The virtual camera sits on the same arc at
    ``virtual_deg`` (static), or sweeps ``virtual_sweep_deg`` over the sequence.

    Sparse clouds sample a ``density`` fraction of each input view's pixels per
    timestep, perturb their depth by N(0, ``depth_noise``) and replace an
    ``outlier_fraction`` of them with points at a random depth along the ray.
    """

    width: int = 192
    height: int = 128
    n_views: int = 5
    n_frames: int = 10
    focal: float = 160.0
    radius: float = 3.5
    baseline_deg: float = 60.0
    virtual_deg: float = -7.5
    virtual_sweep_deg: float = 0.0
    target: tuple = (0.0, 0.0, 3.0)
    wall_z: float = 5.0
    floor_y: float | None = None
    box_center: tuple = (-0.6, 0.25, 3.0)
    box_half: float = 0.45
    box_velocity: tuple = (0.12, 0.0, 0.0)
    box_contrast: float = 0.35
    static: bool = False
    density: float = 0.03
    depth_noise: float = 0.0
    outlier_fraction: float = 0.0
    resample_each_frame: bool = True
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def input_angles(self) -> np.ndarray:
        if self.n_views == 1:
            return np.zeros(1)
        return np.linspace(-self.baseline_deg / 2, self.baseline_deg / 2, self.n_views)

    def camera_at(self, angle_deg: float, t: int = 0, view_index: int = -1) -> CameraPose:
        a = np.radians(angle_deg)
        target = np.asarray(self.target, dtype=np.float64)
        center = target + self.radius * np.array([np.sin(a), 0.0, -np.cos(a)])
        K = make_intrinsics(self.focal, (self.width - 1) / 2, (self.height - 1) / 2)
        return CameraPose(K, look_at(center, target), center, time_index=t, view_index=view_index)

    def input_camera(self, s: int, t: int) -> CameraPose:
        return self.camera_at(float(self.input_angles()[s]), t, view_index=s)

    def virtual_camera(self, t: int) -> CameraPose:
        frac = t / max(self.n_frames - 1, 1)
        return self.camera_at(self.virtual_deg + self.virtual_sweep_deg * frac, t)

    def box_at(self, t: int) -> np.ndarray:
        c = np.asarray(self.box_center, dtype=np.float64)
        return c if self.static else c + t * np.asarray(self.box_velocity, dtype=np.float64)


# ---------------------------------------------------------------------------
# ray casting and textures


def _checker(a, b, cell):
    return ((np.floor(a / cell) + np.floor(b / cell)) % 2).astype(np.float64)


def _wall_color(X):
    c = _checker(X[:, 0], X[:, 1], 0.6)
    base = np.where(c[:, None] > 0, [0.85, 0.72, 0.45], [0.25, 0.38, 0.62])
    mod = 0.08 * np.sin(1.7 * X[:, 0] + 0.6 * X[:, 1])[:, None]
    return base + mod


def _floor_color(X):
    s = _checker(X[:, 0], X[:, 2], 0.5)
    base = np.where(s[:, None] > 0, [0.55, 0.55, 0.5], [0.3, 0.25, 0.2])
    return base + 0.05 * np.sin(2.3 * X[:, 2])[:, None]


_BOX_FACE_COLORS = np.array(
    [[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.95, 0.85, 0.1], [0.6, 0.2, 0.8], [0.1, 0.75, 0.8], [0.95, 0.5, 0.1]]
)


def _box_color(X, center, face, contrast):
    local = X - center
    # two tangential coordinates per face
    ax = face // 2
    rows = np.arange(len(local))
    u = local[rows, (ax + 1) % 3]
    v = local[rows, (ax + 2) % 3]
    c = _checker(u + 1.0, v + 1.0, 0.2)
    base = _BOX_FACE_COLORS[face]
    return base * (1.0 - contrast + contrast * c[:, None])


def cast_rays(spec: SceneSpec, origins: np.ndarray, dirs: np.ndarray, t: int):
    """Intersect rays with the scene.

    ``dirs`` must have unit camera-z component so the returned parameter equals
    camera depth. Returns ``(depth, color)``; misses get depth ``inf``.
    """
    n = len(dirs)
    best = np.full(n, np.inf)
    color = np.zeros((n, 3))

    def consider(tt, X_fn):
        nonlocal best
        hit = np.isfinite(tt) & (tt > 1e-6) & (tt < best)
        if hit.any():
            best = np.where(hit, tt, best)
            color[hit] = X_fn(hit)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_wall = (spec.wall_z - origins[:, 2]) / dirs[:, 2]
        consider(t_wall, lambda m: _wall_color(origins[m] + t_wall[m, None] * dirs[m]))
        if spec.floor_y is not None:
            t_floor = (spec.floor_y - origins[:, 1]) / dirs[:, 1]
            consider(t_floor, lambda m: _floor_color(origins[m] + t_floor[m, None] * dirs[m]))

        c = spec.box_at(t)
        lo, hi = c - spec.box_half, c + spec.box_half
        t1 = (lo - origins) / dirs
        t2 = (hi - origins) / dirs
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        face_axis = tmin.argmax(axis=1)
        t_box = np.where((t_near <= t_far) & (t_near > 0), t_near, np.inf)

        def box_col(m):
            X = origins[m] + t_box[m, None] * dirs[m]
            ax = face_axis[m]
            sign = (dirs[m, ax] > 0).astype(np.int64)  # entering through the low face when moving +
            return _box_color(X, c, 2 * ax + sign, spec.box_contrast)

        consider(t_box, box_col)
    return best, np.clip(color, 0.0, 1.0)


def render_view(spec: SceneSpec, cam: CameraPose, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth ``(depth, color)`` of ``cam`` at time ``t``, sampled at pixel centres."""
    w, h = spec.width, spec.height
    uv = pixel_grid(w, h).reshape(-1, 2)
    rays_cam = np.column_stack([uv, np.ones(len(uv))]) @ cam.K_inv.T
    rays_cam /= rays_cam[:, 2:3]
    dirs = rays_cam @ cam.R
    origins = np.broadcast_to(cam.C, dirs.shape)
    depth, color = cast_rays(spec, origins, dirs, t)
    return depth.reshape(h, w), color.reshape(h, w, 3)


# ---------------------------------------------------------------------------
# sparse sampling


def sample_cloud(
    spec: SceneSpec,
    rng: np.random.Generator,
    t: int,
    renders: list[tuple[np.ndarray, np.ndarray]],
    cams: list[CameraPose],
) -> TimestepPointCloud:
    """Noisy sparse points seen by the input cameras at time ``t``."""
    positions, colors = [], []
    for (depth, color), cam in zip(renders, cams):
        h, w = depth.shape
        pick = rng.random((h, w)) < spec.density
        pick &= np.isfinite(depth)
        v, u = np.nonzero(pick)
        d = depth[v, u]
        if spec.depth_noise > 0:
            d = d + rng.normal(0.0, spec.depth_noise, size=d.shape)
        if spec.outlier_fraction > 0:
            out = rng.random(d.shape) < spec.outlier_fraction
            d = np.where(out, d * rng.uniform(0.5, 1.5, size=d.shape), d)
        d = np.maximum(d, 1e-3)
        positions.append(unproject_points(cam, np.column_stack([u, v]).astype(np.float64), d))
        colors.append(color[v, u])
    return TimestepPointCloud(t, np.concatenate(positions), np.concatenate(colors))


@dataclass
class SyntheticData:
    spec: SceneSpec
    frameset: FrameSet
    clouds: list[TimestepPointCloud]
    path: CameraPath
    ground_truth: list[RenderedFrame]
    params: SolverParams


def make_synthetic(spec: SceneSpec, seed: int = 0) -> SyntheticData:
    """Build a synthetic dataset in memory; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    S, T = spec.n_views, spec.n_frames
    images = [[None] * T for _ in range(S)]
    poses = [[spec.input_camera(s, t) for t in range(T)] for s in range(S)]
    clouds = []
    first_cloud_rng_state = None
    for t in range(T):
        renders = []
        for s in range(S):
            depth, color = render_view(spec, poses[s][t], t)
            images[s][t] = color
            renders.append((depth, color))
        if not spec.resample_each_frame:
            if first_cloud_rng_state is None:
                first_cloud_rng_state = rng.bit_generator.state
            else:
                rng.bit_generator.state = first_cloud_rng_state
        clouds.append(sample_cloud(spec, rng, t, renders, [poses[s][t] for s in range(S)]))
    path = CameraPath([spec.virtual_camera(t) for t in range(T)])
    gt = []
    for t, cam in enumerate(path):
        depth, color = render_view(spec, cam, t)
        gt.append(RenderedFrame(t, color, depth))
    params = SolverParams.from_dict(spec.params) if spec.params else SolverParams()
    return SyntheticData(spec, FrameSet(images, poses), clouds, path, gt, params)


def generate_synthetic(spec: SceneSpec, seed: int, out_dir) -> SyntheticData:
    """Write a synthetic dataset (inputs, clouds, path, config and ground truth) to ``out_dir``."""
    data = make_synthetic(spec, seed)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(out, data.frameset, data.clouds, data.path, data.params)
        for frame in data.ground_truth:
            save_frame(frame, out / "gt")
        spec_doc = asdict(spec)
        spec_doc["seed"] = seed
        (out / "scene.json").write_text(json.dumps(spec_doc, indent=1))
    except OSError as exc:
        raise IoFailure(f"cannot write synthetic dataset to {out}: {exc}") from exc
    return data
