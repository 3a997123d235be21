"""Direct evaluation of the discrete depth and color energies.

Written with array differences only, independent of the sparse assembly in
:mod:`.systems`, so the two can check each other.
"""

from __future__ import annotations

import numpy as np

from ..grid import forward_diff


def _grad_sq(grid):
    gu, gv = forward_diff(grid)
    out = gu**2 + gv**2
    return out.sum(axis=-1) if grid.ndim == 3 else out


def depth_energy(D, problem, weights) -> float:
    p = problem.params
    e = np.sum(weights.w_D * _grad_sq(D))
    e += p.lambda_pc * np.sum(problem.pc_scale * weights.w_hat_D * (D - problem.sparse_depth) ** 2)
    lt = problem.lambda_t
    if lt > 0:
        e += lt * np.sum(problem.prev_scale * weights.w_T * (D - problem.prev_depth) ** 2)
    return float(e)


def color_energy(I, problem, weights) -> float:
    p = problem.params
    e = np.sum(_grad_sq(I))
    Iu, Iv = forward_diff(I)
    for w, src in zip(weights.w_P, weights.sources):
        e += p.lambda_p * problem.area * np.sum(w * np.sum((I - src) ** 2, axis=-1))
        if p.lambda_g > 0:
            su, sv = forward_diff(src)
            wu = np.zeros_like(w)
            wv = np.zeros_like(w)
            wu[:, :-1] = np.minimum(w[:, :-1], w[:, 1:])
            wv[:-1] = np.minimum(w[:-1], w[1:])
            e += p.lambda_g * (
                np.sum(wu * np.sum((Iu - su) ** 2, axis=-1)) + np.sum(wv * np.sum((Iv - sv) ** 2, axis=-1))
            )
    lt = problem.lambda_t
    if lt > 0:
        e += lt * np.sum(problem.prev_scale * weights.w_T * np.sum((I - problem.prev_color) ** 2, axis=-1))
    return float(e)


def eval_energy(D, I, problem, weights) -> float:
    """Total energy ``E_D + E_I`` of a depth/color pair under fixed weights."""
    return depth_energy(D, problem, weights) + color_energy(I, problem, weights)
