"""Dense image-domain grids: pyramids, resampling and forward differences.

Grids are plain numpy arrays of shape ``(H, W)`` or ``(H, W, C)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .errors import GridTooSmall


def level_shape(height: int, width: int, level: int) -> tuple[int, int]:
    f = 2**level
    return math.ceil(height / f), math.ceil(width / f)


def max_levels(height: int, width: int, min_size: int = 8) -> int:
    """Largest pyramid depth whose coarsest level is at least ``min_size`` on each side."""
    levels = 1
    while min(level_shape(height, width, levels)) >= min_size:
        levels += 1
    return levels


def downsample(grid: np.ndarray, weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """2x2 box average over valid pixels.

    ``weights`` is an occupancy (or confidence) map; with ``None`` every pixel
    counts and odd trailing rows/columns average only the pixels they contain.
    Returns the averaged grid and the summed weights of each coarse pixel.
    """
    h, w = grid.shape[:2]
    hc, wc = math.ceil(h / 2), math.ceil(w / 2)
    wt = np.ones((h, w)) if weights is None else np.asarray(weights, dtype=np.float64)
    pad = ((0, 2 * hc - h), (0, 2 * wc - w))
    wt = np.pad(wt, pad)
    g = np.pad(np.asarray(grid, dtype=np.float64), pad + ((0, 0),) * (grid.ndim - 2))
    wsum = wt.reshape(hc, 2, wc, 2).sum(axis=(1, 3))
    if grid.ndim == 3:
        vsum = (g * wt[..., None]).reshape(hc, 2, wc, 2, -1).sum(axis=(1, 3))
        den = wsum[..., None]
    else:
        vsum = (g * wt).reshape(hc, 2, wc, 2).sum(axis=(1, 3))
        den = wsum
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, vsum / np.where(den > 0, den, 1.0), 0.0)
    return out, wsum


def build_pyramid(
    grid: np.ndarray,
    levels: int,
    occupancy: np.ndarray | None = None,
    min_size: int = 1,
) -> list[np.ndarray]:
    """Box-filter pyramid, finest level first.

    Level ``k`` has shape ``ceil(H / 2**k) x ceil(W / 2**k)``. For sparse grids pass
    ``occupancy``; the average then only sees occupied pixels, so a lone sample
    keeps its value all the way down. Use :func:`build_sparse_pyramid` to also get
    the propagated occupancy masks.

    Raises:
        GridTooSmall: if the coarsest level is smaller than ``min_size``.
    """
    return build_sparse_pyramid(grid, levels, occupancy, min_size)[0]


def build_sparse_pyramid(grid, levels, occupancy=None, min_size=1):
    if levels < 1:
        raise ValueError("levels must be >= 1")
    h, w = grid.shape[:2]
    ch, cw = level_shape(h, w, levels - 1)
    if min(ch, cw) < min_size:
        raise GridTooSmall(
            f"{levels} levels on a {w}x{h} grid give a {cw}x{ch} coarsest level (minimum {min_size}x{min_size})"
        )
    g = np.asarray(grid, dtype=np.float64)
    wt = None if occupancy is None else np.asarray(occupancy, dtype=np.float64)
    grids = [g]
    masks = [np.ones((h, w), dtype=bool) if wt is None else wt > 0]
    for _ in range(1, levels):
        g, wsum = downsample(g, wt)
        if wt is not None:
            wt = (wsum > 0).astype(np.float64)
        grids.append(g)
        masks.append(wsum > 0)
    return grids, masks


def upsample(grid: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling by 2 onto a grid of ``shape`` (pixel-centre aligned)."""
    h, w = shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [(v + 0.5) / 2 - 0.5, (u + 0.5) / 2 - 0.5]
    if grid.ndim == 2:
        return ndimage.map_coordinates(grid, coords, order=1, mode="nearest")
    return np.stack(
        [ndimage.map_coordinates(grid[..., c], coords, order=1, mode="nearest") for c in range(grid.shape[2])],
        axis=-1,
    )


def forward_diff(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along u and v with homogeneous Neumann boundary.

    The last column of the u-difference and last row of the v-difference are 0.
    """
    gu = np.zeros_like(grid, dtype=np.float64)
    gv = np.zeros_like(grid, dtype=np.float64)
    gu[:, :-1] = grid[:, 1:] - grid[:, :-1]
    gv[:-1] = grid[1:] - grid[:-1]
    return gu, gv


def grad_norm_sq(grid: np.ndarray) -> np.ndarray:
    """Per-pixel squared forward-difference gradient norm, summed over channels."""
    gu, gv = forward_diff(grid)
    out = gu**2 + gv**2
    return out.sum(axis=-1) if grid.ndim == 3 else out


def nearest_fill(values: np.ndarray, occupancy: np.ndarray) -> np.ndarray:
    """Fill every pixel with the value of its nearest occupied pixel."""
    if not occupancy.any():
        return np.zeros_like(values)
    _, (iv, iu) = ndimage.distance_transform_edt(~occupancy, return_indices=True)
    return values[iv, iu]
