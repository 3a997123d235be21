"""Per-pixel confidence weights steering the depth and color diffusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..grid import grad_norm_sq


@dataclass
class WeightMaps:
    """Weights for one frame at one pyramid level.

    ``w_P``, ``vis`` and ``sources``/``source_masks`` hold one grid per selected
    input view. ``sources`` are the warped input images the weights were measured
    against; the color data terms use the same images.
    """

    w_D: np.ndarray
    w_hat_D: np.ndarray
    w_P: list[np.ndarray]
    vis: list[np.ndarray]
    w_T: np.ndarray
    sources: list[np.ndarray] = field(default_factory=list, repr=False)
    source_masks: list[np.ndarray] = field(default_factory=list, repr=False)


def color_affinity(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    """``exp(-||a - b||^2 / (2 sigma^2))`` over the trailing color axis."""
    return np.exp(-np.sum((a - b) ** 2, axis=-1) / (2.0 * sigma**2))


def compute_w_hat_D(sparse_color, color, sigma, occupancy=None) -> np.ndarray:
    """Confidence of each projected sparse point, zero at empty pixels.

    A point whose color disagrees with the current rendering is most likely
    occluded in the novel view or misplaced, and loses its pull on the depth.
    """
    w = color_affinity(sparse_color, color, sigma)
    if occupancy is not None:
        w = np.where(occupancy, w, 0.0)
    return w


def compute_w_P(warped, color, vis, sigma, mask=None) -> np.ndarray:
    w = np.asarray(vis, dtype=np.float64) * color_affinity(warped, color, sigma)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    return w


def compute_w_D(
    color: np.ndarray,
    w_P: list[np.ndarray],
    vis: list[np.ndarray],
    eps_g: float = 1e-3,
    eps_w: float = 1e-6,
    use_image_grads: bool = True,
) -> np.ndarray:
    """Depth smoothness weight: low across color edges and where sources disagree.

    ``(sum w_P + eps_w) / ((||grad I||^2 + eps_g) * sum vis)``; pixels no source
    sees fall back to ``1 / (||grad I||^2 + eps_g)``. With ``use_image_grads`` off
    the color-gradient factor is dropped.
    """
    if not w_P:
        raise ValueError("need at least one source")
    g = grad_norm_sq(color) + eps_g if use_image_grads else np.ones(color.shape[:2])
    sum_p = np.sum(w_P, axis=0)
    sum_vis = np.sum(np.asarray(vis, dtype=np.float64), axis=0)
    seen = sum_vis > 0
    return np.where(seen, (sum_p + eps_w) / (g * np.maximum(sum_vis, 1.0)), 1.0 / g)


def compute_w_T(prev_color, prev_mask, warped, masks, sigma) -> np.ndarray:
    """Temporal confidence: mean color agreement of the previous frame with the sources.

    The mean runs over the sources valid at each pixel; pixels seen by no source
    keep full weight, pixels without a previous-frame value get zero.
    """
    agree = np.zeros(prev_color.shape[:2])
    count = np.zeros(prev_color.shape[:2])
    for img, m in zip(warped, masks):
        agree += np.where(m, color_affinity(prev_color, img, sigma), 0.0)
        count += m
    w = np.where(count > 0, agree / np.maximum(count, 1), 1.0)
    return np.where(prev_mask, w, 0.0)
