"""Alternating depth/color minimization of one frame, single- and multi-scale."""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..dataset_io import SolverParams
from ..errors import NonFiniteInput
from ..geometry import CameraPose, splat_arrays, visibility_maps, warp_frame
from ..grid import build_sparse_pyramid, level_shape, nearest_fill, upsample
from . import systems
from .energy import color_energy, depth_energy
from .pcg import pcg
from .weights import WeightMaps, compute_w_D, compute_w_hat_D, compute_w_P, compute_w_T

logger = logging.getLogger(__name__)

MIN_LEVEL_SIZE = 8
FRONT_TOL = 0.05  # relative depth band treated as one surface when averaging splats


@dataclass
class SolveStats:
    """PCG iteration counts per pyramid level (level 0 is the finest)."""

    iterations: dict = field(default_factory=lambda: defaultdict(int))
    level: int = 0
    unconverged: int = 0

    def add(self, info) -> None:
        self.iterations[self.level] += info.iterations
        self.unconverged += not info.converged


def _record(stats, info):
    if stats is not None:
        stats.add(info)


@dataclass
class WarpedSources:
    images: list[np.ndarray]
    masks: list[np.ndarray]
    vis: list[np.ndarray]


@dataclass
class FrameProblem:
    """Everything needed to solve one novel frame at one resolution.

    ``sources`` pairs each selected input image with its camera, both at this
    level's resolution; they are re-warped whenever the depth changes. The
    previous-frame fields are ``None`` for the first frame.

    At pyramid ``level`` k one pixel stands for ``4**k`` full-resolution
    pixels. Data terms are weighted by the number of full-resolution pixels
    behind each coarse pixel (``sparse_count``/``prev_count`` for splatted
    data, the pixel area for warped sources), so every level discretizes the
    same energy. Smoothness terms need no factor: in 2D they are invariant to
    grid spacing.
    """

    camera: CameraPose
    sparse_depth: np.ndarray
    sparse_color: np.ndarray
    occupancy: np.ndarray
    sources: list[tuple[np.ndarray, CameraPose]]
    params: SolverParams
    prev_depth: np.ndarray | None = None
    prev_color: np.ndarray | None = None
    prev_mask: np.ndarray | None = None
    threads: int = 1
    level: int = 0
    sparse_count: np.ndarray | None = None
    prev_count: np.ndarray | None = None

    @property
    def area(self) -> float:
        return float(4**self.level)

    @property
    def pc_scale(self) -> np.ndarray:
        if self.sparse_count is None:
            return self.occupancy.astype(np.float64)
        return np.asarray(self.sparse_count, dtype=np.float64)

    @property
    def prev_scale(self) -> np.ndarray:
        if self.prev_count is None:
            return self.prev_mask.astype(np.float64)
        return np.asarray(self.prev_count, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, int]:
        return self.sparse_depth.shape

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.shape
        return w, h

    @property
    def lambda_t(self) -> float:
        if self.prev_depth is None or "no_temporal" in self.params.ablations:
            return 0.0
        return self.params.lambda_t

    def warp(self, depth: np.ndarray) -> WarpedSources:
        """Warp every source into the novel view through ``depth``."""

        def one(src):
            img, cam = src
            warped, mask = warp_frame(img, cam, self.camera, depth)
            h, w = img.shape[:2]
            vis = visibility_maps(self.camera, depth, cam, (w, h)) & mask
            return warped, mask, vis

        if self.threads > 1 and len(self.sources) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                out = list(ex.map(one, self.sources))
        else:
            out = [one(s) for s in self.sources]
        return WarpedSources([o[0] for o in out], [o[1] for o in out], [o[2] for o in out])


def compute_weights(problem: FrameProblem, color: np.ndarray, warped: WarpedSources) -> WeightMaps:
    """All weight maps for the current color estimate and warped sources."""
    p = problem.params
    abl = set(p.ablations)
    if "no_pc_weights" in abl:
        w_hat = problem.occupancy.astype(np.float64)
    else:
        w_hat = compute_w_hat_D(problem.sparse_color, color, p.sigma, problem.occupancy)
    if "no_proj_weights" in abl:
        w_P = [np.where(m, v, 0).astype(np.float64) for v, m in zip(warped.vis, warped.masks)]
    else:
        w_P = [compute_w_P(img, color, v, p.sigma, m) for img, v, m in zip(warped.images, warped.vis, warped.masks)]
    if not w_P:
        w_D = np.ones(problem.shape)
    elif "no_depth_weights" in abl:
        w_D = np.ones(problem.shape)
    else:
        w_D = compute_w_D(
            color,
            w_P,
            warped.vis,
            p.eps_g,
            p.eps_w,
            use_image_grads="no_image_grads" not in abl,
        )
    if problem.prev_depth is not None:
        w_T = compute_w_T(problem.prev_color, problem.prev_mask, warped.images, warped.masks, p.sigma)
    else:
        w_T = np.zeros(problem.shape)
    return WeightMaps(w_D, w_hat, w_P, warped.vis, w_T, warped.images, warped.masks)


# ---------------------------------------------------------------------------
# linear subproblems


def depth_system(problem: FrameProblem, weights: WeightMaps, check: bool = True):
    """Normal equations ``(A, b)`` of the depth energy under fixed weights."""
    p = problem.params
    d = p.lambda_pc * weights.w_hat_D * problem.pc_scale
    num = d * problem.sparse_depth
    lt = problem.lambda_t
    if lt > 0:
        dt = lt * weights.w_T * problem.prev_scale
        d = d + dt
        num = num + dt * np.where(problem.prev_mask, problem.prev_depth, 0.0)
    y = np.where(d > 0, num / np.where(d > 0, d, 1.0), 0.0)
    a = systems.pixel_to_edges(weights.w_D)
    return systems.assemble(problem.shape, a, d, y, check=check)


def color_system(problem: FrameProblem, weights: WeightMaps, check: bool = True):
    """Normal equations ``(A, B)`` of the color energy; ``B`` has one column per channel."""
    p = problem.params
    h, w = problem.shape
    d = np.zeros((h, w))
    num = np.zeros((h, w, 3))
    n_edges = h * (w - 1) + (h - 1) * w
    a = np.ones(n_edges)
    ag = np.zeros((n_edges, 3))
    for wp, src in zip(weights.w_P, weights.sources):
        d += p.lambda_p * problem.area * wp
        num += (p.lambda_p * problem.area * wp)[..., None] * src
        if p.lambda_g > 0:
            m = p.lambda_g * systems.min_to_edges(wp)
            a += m
            ag += m[:, None] * systems.edge_values(src)
    lt = problem.lambda_t
    if lt > 0:
        dt = lt * weights.w_T * problem.prev_scale
        d += dt
        num += dt[..., None] * np.where(problem.prev_mask[..., None], problem.prev_color, 0.0)
    y = np.where(d[..., None] > 0, num / np.where(d > 0, d, 1.0)[..., None], 0.0)
    g = ag / a[:, None]
    return systems.assemble(problem.shape, a, d, y, edge_target=g, check=check)


def solve_depth(problem: FrameProblem, weights: WeightMaps, D_init: np.ndarray, stats: SolveStats | None = None):
    """Minimize the depth energy for fixed weights, starting from ``D_init``.

    Pixels without any data term are filled by weighted-harmonic diffusion. If
    no pixel carries data the initialization is returned unchanged.
    """
    if not np.all(np.isfinite(D_init)):
        raise NonFiniteInput("initial depth contains non-finite values")
    p = problem.params
    d_total = p.lambda_pc * weights.w_hat_D.sum() + problem.lambda_t * weights.w_T.sum()
    if d_total <= 0:
        logger.debug("depth subproblem has no data term; keeping initialization")
        return D_init.copy()
    A, b = depth_system(problem, weights)
    x, info = pcg(A, b, D_init.ravel(), tol=p.cg_tolerance, maxiter=p.inner_iters, preconditioner=p.preconditioner)
    _record(stats, info)
    return x.reshape(problem.shape)


def solve_color(
    problem: FrameProblem,
    weights: WeightMaps,
    I_init: np.ndarray,
    stats: SolveStats | None = None,
    clamp: bool = False,
):
    """Minimize the color energy (all channels at once) for fixed weights."""
    if not np.all(np.isfinite(I_init)):
        raise NonFiniteInput("initial color contains non-finite values")
    p = problem.params
    d_total = sum(float(w.sum()) for w in weights.w_P) * p.lambda_p + problem.lambda_t * weights.w_T.sum()
    if d_total <= 0:
        logger.debug("color subproblem has no data term; keeping initialization")
        out = I_init.copy()
    else:
        A, B = color_system(problem, weights)
        x, info = pcg(A, B, I_init.reshape(-1, 3), tol=p.cg_tolerance, maxiter=p.inner_iters, preconditioner=p.preconditioner)
        _record(stats, info)
        out = x.reshape(problem.shape + (3,))
    return np.clip(out, 0.0, 1.0) if clamp else out


def harmonic_infill(
    values: np.ndarray,
    occupancy: np.ndarray,
    tol: float = 1e-10,
    maxiter: int = 500,
    stats: SolveStats | None = None,
    fallback: float = 0.0,
    preconditioner: str = "lu",
) -> np.ndarray:
    """Fill unoccupied pixels by unit-weight harmonic interpolation of the occupied ones.

    Occupied pixels keep their values (Dirichlet data). With no occupied pixel the
    grid is set to ``fallback``.
    """
    h, w = occupancy.shape
    if not occupancy.any():
        return np.full(values.shape, fallback, dtype=np.float64)
    free = ~occupancy.ravel()
    if not free.any():
        return values.astype(np.float64).copy()
    G, _, _ = systems.difference_operator(h, w)
    L = (G.T @ G).tocsr()
    flat = values.reshape(h * w, -1).astype(np.float64)
    A_ff = L[free][:, free]
    rhs = -(L[free][:, ~free] @ flat[~free])
    x0 = nearest_fill(values, occupancy).reshape(h * w, -1)[free]
    x, info = pcg(A_ff, rhs, x0, tol=tol, maxiter=maxiter, preconditioner=preconditioner)
    _record(stats, info)
    out = flat.copy()
    out[free] = x
    return out.reshape(values.shape)


class AlternateResult(NamedTuple):
    depth: np.ndarray
    color: np.ndarray
    energy: float
    weights: WeightMaps | None


def initial_estimates(problem: FrameProblem, stats: SolveStats | None = None):
    """Harmonic infill of the splatted sparse depth and colors."""
    p = problem.params
    kw = dict(tol=p.cg_tolerance, maxiter=p.inner_iters, stats=stats, preconditioner=p.preconditioner)
    D0 = harmonic_infill(problem.sparse_depth, problem.occupancy, fallback=1.0, **kw)
    I0 = harmonic_infill(problem.sparse_color, problem.occupancy, fallback=0.5, **kw)
    return D0, I0


def alternate_solve(
    problem: FrameProblem,
    D_init: np.ndarray | None = None,
    I_init: np.ndarray | None = None,
    stats: SolveStats | None = None,
    trace: list | None = None,
) -> AlternateResult:
    """Alternate depth and color solves for ``params.outer_iters`` rounds.

    Each round recomputes weights, solves depth, re-warps the sources with the
    new depth, recomputes weights and solves color. Weights are frozen inside a
    subproblem so each solve is a linear SPD system. ``trace``, when given,
    receives one dict per subproblem with its objective before and after, plus
    the total energy of the initialization (under the first weights) and of
    the result (under the last).

    Returns the final depth, color, total energy under the last weights, and
    those weights (``None`` when no round ran).
    """
    if D_init is None or I_init is None:
        D0, I0 = initial_estimates(problem, stats)
        D_init = D0 if D_init is None else D_init
        I_init = I0 if I_init is None else I_init
    D = np.array(D_init, dtype=np.float64)
    I = np.array(I_init, dtype=np.float64)
    weights = None
    for it in range(problem.params.outer_iters):
        weights = compute_weights(problem, I, problem.warp(D))
        before = depth_energy(D, problem, weights)
        if trace is not None and it == 0:
            trace.append({"round": -1, "kind": "init", "energy": before + color_energy(I, problem, weights)})
        D = solve_depth(problem, weights, D, stats)
        if trace is not None:
            trace.append({"round": it, "kind": "depth", "before": before, "after": depth_energy(D, problem, weights)})
        weights = compute_weights(problem, I, problem.warp(D))
        before = color_energy(I, problem, weights)
        I = solve_color(problem, weights, I, stats)
        if trace is not None:
            trace.append({"round": it, "kind": "color", "before": before, "after": color_energy(I, problem, weights)})
    energy = float("nan")
    if weights is not None:
        energy = depth_energy(D, problem, weights) + color_energy(I, problem, weights)
        if trace is not None:
            trace.append({"round": problem.params.outer_iters, "kind": "final", "energy": energy})
    return AlternateResult(D, I, energy, weights)


# ---------------------------------------------------------------------------
# coarse-to-fine


@dataclass
class FrameInputs:
    """Full-resolution inputs of one novel frame.

    ``prev_points``/``prev_colors`` are the previous output frame lifted to world
    space; they are splatted into each level to form the temporal constraint.
    """

    camera: CameraPose
    size: tuple[int, int]
    cloud_positions: np.ndarray
    cloud_colors: np.ndarray
    sources: list[tuple[np.ndarray, CameraPose]]
    prev_points: np.ndarray | None = None
    prev_colors: np.ndarray | None = None


class FrameSolution(NamedTuple):
    depth: np.ndarray
    color: np.ndarray
    energy: float
    coverage: np.ndarray


def splat_pyramid(positions, colors, camera: CameraPose, size, levels: int, front_tol: float = FRONT_TOL):
    """Splat points at full resolution and average them down the pyramid.

    A coarse pixel averages the full-resolution samples in its footprint that
    lie within a relative ``front_tol`` of the nearest one, so occluded points
    do not leak into the front surface, and its colors stay comparable to the
    box-filtered source images. Returns one ``(depth, color, count)`` triple
    per level, ``count`` being the number of samples averaged.
    """
    w, h = size
    D, I, occ = splat_arrays(positions, colors, camera, (w, h))
    out = [(D, I, occ.astype(np.float64))]
    v, u = np.nonzero(occ)
    d, c = D[v, u], I[v, u]
    for k in range(1, levels):
        hl, wl = level_shape(h, w, k)
        cell = (v >> k) * wl + (u >> k)
        front = np.full(hl * wl, np.inf)
        np.minimum.at(front, cell, d)
        keep = d <= front[cell] * (1.0 + front_tol)
        n = np.bincount(cell[keep], minlength=hl * wl).astype(np.float64)
        dsum = np.bincount(cell[keep], weights=d[keep], minlength=hl * wl)
        csum = np.stack([np.bincount(cell[keep], weights=c[keep, j], minlength=hl * wl) for j in range(3)], -1)
        den = np.maximum(n, 1.0)
        out.append(((dsum / den).reshape(hl, wl), (csum / den[:, None]).reshape(hl, wl, 3), n.reshape(hl, wl)))
    return out


def build_level_problem(
    inputs: FrameInputs,
    params: SolverParams,
    level: int,
    source_pyramids,
    threads: int = 1,
    sparse_pyramid=None,
    prev_pyramid=None,
):
    """The single-level problem of ``inputs`` at pyramid ``level``.

    ``sparse_pyramid``/``prev_pyramid`` come from :func:`splat_pyramid`; they
    are computed here when omitted.
    """
    levels = level + 1
    cam = inputs.camera.scaled(level)
    if sparse_pyramid is None:
        sparse_pyramid = splat_pyramid(inputs.cloud_positions, inputs.cloud_colors, inputs.camera, inputs.size, levels)
    D_hat, I_hat, count = sparse_pyramid[level]
    sources = [(pyr[level], src_cam.scaled(level)) for pyr, (_, src_cam) in zip(source_pyramids, inputs.sources)]
    prev = dict()
    if inputs.prev_points is not None:
        if prev_pyramid is None:
            prev_pyramid = splat_pyramid(inputs.prev_points, inputs.prev_colors, inputs.camera, inputs.size, levels)
        pd, pc, pn = prev_pyramid[level]
        prev = dict(prev_depth=pd, prev_color=pc, prev_mask=pn > 0, prev_count=pn)
    return FrameProblem(
        cam, D_hat, I_hat, count > 0, sources, params, threads=threads, level=level, sparse_count=count, **prev
    )


def multiscale_solve(
    inputs: FrameInputs,
    params: SolverParams,
    stats: SolveStats | None = None,
    threads: int = 1,
    trace: list | None = None,
) -> FrameSolution:
    """Solve from the coarsest pyramid level to the finest.

    Each level's depth starts from the bilinear upsampling of the coarser
    depth (harmonic infill of the splatted points on the coarsest level); its
    color always starts from the infilled splat colors. Starting color from an
    upsampled, blurred image instead makes the sparse points disagree with it
    along every texture edge, and their weights collapse. Sparse
    and temporal data are splatted once at full resolution and averaged down.

    Raises:
        GridTooSmall: if the coarsest level would be smaller than 8x8.
    """
    levels = params.pyramid_levels
    source_pyramids = [
        build_sparse_pyramid(img, levels, min_size=MIN_LEVEL_SIZE)[0] for img, _ in inputs.sources
    ]
    if not inputs.sources:
        w, h = inputs.size
        build_sparse_pyramid(np.zeros((h, w)), levels, min_size=MIN_LEVEL_SIZE)
    sparse = splat_pyramid(inputs.cloud_positions, inputs.cloud_colors, inputs.camera, inputs.size, levels)
    prev = None
    if inputs.prev_points is not None:
        prev = splat_pyramid(inputs.prev_points, inputs.prev_colors, inputs.camera, inputs.size, levels)
    D = None
    result = None
    problem = None
    for level in reversed(range(levels)):
        if stats is not None:
            stats.level = level
        problem = build_level_problem(inputs, params, level, source_pyramids, threads, sparse, prev)
        if D is not None:
            D = upsample(D, problem.shape)
        level_trace = [] if trace is not None else None
        result = alternate_solve(problem, D, None, stats, level_trace)
        if trace is not None:
            trace.extend(dict(entry, level=level) for entry in level_trace)
        D = result.depth
    if result.weights is not None:
        coverage = np.any(result.weights.source_masks, axis=0) if result.weights.source_masks else problem.occupancy.copy()
    else:
        coverage = np.any(problem.warp(D).masks, axis=0) if problem.sources else problem.occupancy.copy()
    coverage = coverage | problem.occupancy
    if problem.prev_mask is not None:
        coverage |= problem.prev_mask
    return FrameSolution(D, result.color, result.energy, coverage)
