"""Streaming novel-view rendering, view ranking, metrics and ablations."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset_io import (
    CameraPath,
    FrameSet,
    RenderedFrame,
    SolverParams,
    TimestepPointCloud,
    save_frame,
)
from .diffusion import FrameInputs, SolveStats, multiscale_solve
from .errors import LengthMismatch, NVSError
from .geometry import CameraPose, rotation_angle, splat_points, unproject_depth_map, warp_frame
from .grid import nearest_fill

logger = logging.getLogger(__name__)

EPS_CENTER = 1e-8
PSNR_CAP = 99.0
METRICS_FIELDS = ("frame_index", "psnr_db", "depth_rmse", "temporal_delta", "coverage")


# ---------------------------------------------------------------------------
# view ranking


@dataclass
class ViewRanking:
    scores: np.ndarray
    selected: list[int]


def view_score(virtual: CameraPose, cam: CameraPose, sigma: float) -> float:
    """Proximity score: inverse squared center distance times an angular falloff."""
    dist2 = float(np.sum((virtual.C - cam.C) ** 2))
    angle = rotation_angle(virtual.R @ cam.R.T)
    return float(np.exp(-angle / (2.0 * np.pi * sigma**2)) / (dist2 + EPS_CENTER))


def rank_views(virtual: CameraPose, inputs: list[CameraPose], sigma: float = 0.075, n: int = 4) -> ViewRanking:
    """Score every input camera against the virtual one and keep the best ``n``.

    Ties go to the lower view index. Asking for more views than exist selects all.
    """
    if not inputs:
        raise ValueError("need at least one input camera")
    scores = np.array([view_score(virtual, cam, sigma) for cam in inputs])
    order = sorted(range(len(inputs)), key=lambda s: (-scores[s], s))
    return ViewRanking(scores, order[: min(n, len(inputs))])


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    frame_index: int
    psnr_db: float = math.nan
    depth_rmse: float = math.nan
    temporal_delta: float = math.nan
    coverage: float = math.nan

    def row(self) -> dict:
        return {k: getattr(self, k) for k in METRICS_FIELDS}


def psnr(img: np.ndarray, ref: np.ndarray) -> float:
    """PSNR in dB for [0, 1] images; identical images give ``inf``."""
    mse = float(np.mean((np.asarray(img, dtype=np.float64) - ref) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def depth_rmse(depth: np.ndarray, ref: np.ndarray) -> float:
    ok = np.isfinite(ref) & (ref > 0)
    if not ok.any():
        return math.nan
    return float(np.sqrt(np.mean((depth[ok] - ref[ok]) ** 2)))


def compute_metrics(
    rendered: list[RenderedFrame],
    ground_truth: list[RenderedFrame] | None = None,
) -> list[Metrics]:
    """Per-frame metrics; PSNR and depth RMSE need ground truth.

    Raises:
        LengthMismatch: if ground truth is given for a different number of frames
            or with different dimensions.
    """
    if ground_truth is not None and len(ground_truth) != len(rendered):
        raise LengthMismatch(f"{len(rendered)} rendered frames vs {len(ground_truth)} ground-truth frames")
    out = []
    for k, frame in enumerate(rendered):
        m = Metrics(frame.time_index)
        if ground_truth is not None:
            gt = ground_truth[k]
            if gt.color.shape != frame.color.shape or gt.depth.shape != frame.depth.shape:
                raise LengthMismatch(f"frame {frame.time_index}: shape differs from ground truth")
            m.psnr_db = psnr(frame.color, gt.color)
            m.depth_rmse = depth_rmse(frame.depth, gt.depth)
        if k > 0:
            m.temporal_delta = float(np.mean(np.abs(frame.color - rendered[k - 1].color)))
        if frame.coverage is not None:
            m.coverage = float(np.mean(frame.coverage))
        out.append(m)
    return out


def write_metrics_csv(path, metrics: list[Metrics], extra: dict | None = None) -> None:
    fields = list(extra or {}) + list(METRICS_FIELDS)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for m in metrics:
            row = dict(extra or {})
            row.update({k: _fmt(v) for k, v in m.row().items()})
            writer.writerow(row)


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return f"{PSNR_CAP:.2f}"
        return f"{v:.6f}"
    return v


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# rendering


def frame_inputs(
    frameset: FrameSet,
    cloud: TimestepPointCloud,
    camera: CameraPose,
    t: int,
    params: SolverParams,
    previous: tuple[CameraPose, RenderedFrame] | None = None,
) -> tuple[FrameInputs, ViewRanking]:
    """Assemble the solver inputs of frame ``t``: ranked sources and previous frame."""
    cams = [frameset.poses[s][t] for s in range(frameset.S)]
    ranking = rank_views(camera, cams, params.ranking_sigma, params.n_views)
    sources = [(frameset.images[s][t], cams[s]) for s in ranking.selected]
    prev_points = prev_colors = None
    if previous is not None:
        prev_cam, prev_frame = previous
        prev_points = unproject_depth_map(prev_cam, prev_frame.depth).reshape(-1, 3)
        prev_colors = prev_frame.color.reshape(-1, 3)
    inputs = FrameInputs(camera, frameset.size, cloud.positions, cloud.colors, sources, prev_points, prev_colors)
    return inputs, ranking


def render_sequence(
    frameset: FrameSet,
    clouds: list[TimestepPointCloud],
    path: CameraPath,
    params: SolverParams,
    ground_truth: list[RenderedFrame] | None = None,
    out_dir=None,
    threads: int = 1,
    stats: SolveStats | None = None,
) -> tuple[list[RenderedFrame], list[Metrics]]:
    """Render the virtual path frame by frame.

    Each frame is solved coarse-to-fine from its splatted point cloud and its
    ``params.n_views`` best-ranked inputs, tied to the previous output frame
    reprojected into the current camera. With ``out_dir`` the frames, depth
    maps, coverage masks and ``metrics.csv`` are written as they are produced.

    Raises:
        NVSError: wrapping any per-frame failure, with the frame index.
    """
    if len(path) > frameset.T:
        raise LengthMismatch(f"path has {len(path)} poses but the dataset only {frameset.T} frames")
    if len(clouds) < len(path):
        raise LengthMismatch(f"{len(clouds)} point clouds for a {len(path)}-frame path")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    frames: list[RenderedFrame] = []
    previous = None
    for t, camera in enumerate(path):
        try:
            inputs, ranking = frame_inputs(frameset, clouds[t], camera, t, params, previous)
            logger.info("frame %d: sources %s", t, ranking.selected)
            sol = multiscale_solve(inputs, params, stats=stats, threads=threads)
        except NVSError as exc:
            raise type(exc)(f"frame {t}: {exc}") from exc
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NVSError(f"frame {t}: {exc}") from exc
        frame = RenderedFrame(t, np.clip(sol.color, 0.0, 1.0), sol.depth, sol.coverage)
        frames.append(frame)
        previous = (camera, frame)
        if out_dir is not None:
            save_frame(frame, out_dir)
    metrics = compute_metrics(frames, ground_truth[: len(frames)] if ground_truth is not None else None)
    if out_dir is not None:
        write_metrics_csv(Path(out_dir) / "metrics.csv", metrics)
    return frames, metrics


# ---------------------------------------------------------------------------
# baselines


def nearest_sample_depth(cloud: TimestepPointCloud, camera: CameraPose, size) -> np.ndarray:
    """Depth map filled from the nearest occupied splat pixel."""
    depth, _, occ = splat_points(cloud, camera, size)
    return nearest_fill(depth, occ)


def single_view_psnrs(
    frameset: FrameSet,
    t: int,
    camera: CameraPose,
    depth: np.ndarray,
    reference: np.ndarray,
    views: list[int] | None = None,
) -> list[float]:
    """PSNR of each input view warped alone through ``depth``; unseen pixels stay black."""
    views = range(frameset.S) if views is None else views
    out = []
    for s in views:
        warped, mask = warp_frame(frameset.images[s][t], frameset.poses[s][t], camera, depth)
        out.append(psnr(np.where(mask[..., None], warped, 0.0), reference))
    return out


# ---------------------------------------------------------------------------
# ablations


def ablation_configs(toggles) -> dict[str, tuple[str, ...]]:
    """The full method plus one run per single toggle."""
    configs = {"full": ()}
    for tog in toggles:
        configs[tog] = (tog,)
    return configs


def ablate(
    frameset: FrameSet,
    clouds: list[TimestepPointCloud],
    path: CameraPath,
    params: SolverParams,
    toggles,
    ground_truth: list[RenderedFrame] | None = None,
    out_dir=None,
    threads: int = 1,
) -> dict[str, list[Metrics]]:
    """Render once per configuration and collect the per-frame metrics.

    With ``out_dir`` each configuration's frames go to ``out_dir/<name>/`` and a
    combined ``ablation.csv`` (one row per configuration and frame) is written.
    """
    results = {}
    for name, abl in ablation_configs(toggles).items():
        p = params.replace(ablations=tuple(sorted(set(params.ablations) | set(abl))))
        sub = None if out_dir is None else Path(out_dir) / name
        logger.info("ablation run %s", name)
        _, metrics = render_sequence(frameset, clouds, path, p, ground_truth, sub, threads)
        results[name] = metrics
    if out_dir is not None:
        write_ablation_csv(Path(out_dir) / "ablation.csv", results)
    return results


def write_ablation_csv(path, results: dict[str, list[Metrics]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["config", *METRICS_FIELDS])
        writer.writeheader()
        for name, metrics in results.items():
            for m in metrics:
                row = {"config": name}
                row.update({k: _fmt(v) for k, v in m.row().items()})
                writer.writerow(row)


def summarize(metrics: list[Metrics]) -> dict[str, float]:
    """Means over frames, ignoring frames where a metric is undefined."""
    out = {}
    for key in METRICS_FIELDS[1:]:
        vals = np.array([getattr(m, key) for m in metrics], dtype=np.float64)
        vals = np.minimum(vals, PSNR_CAP) if key == "psnr_db" else vals
        ok = np.isfinite(vals)
        out[key] = float(vals[ok].mean()) if ok.any() else math.nan
    return out
