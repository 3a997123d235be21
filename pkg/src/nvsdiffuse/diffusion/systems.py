"""Assembly of the normal equations of the depth and color energies.

Both energies are quadratic of the form::

    E(z) = sum_e a_e (z_q - z_p - g_e)^2 + sum_x d_x (z_x - y_x)^2

over the forward-difference edges ``e = (p, q)`` of the pixel grid. Their
minimizer solves ``A z = b`` with ``A = G^T diag(a) G + diag(d)`` and
``b = G^T (a g) + d y``; the gradient of ``E`` is ``2 (A z - b)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..errors import NonFiniteInput, SingularSystem


@lru_cache(maxsize=32)
def difference_operator(height: int, width: int) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """Forward-difference operator ``G`` (edges x pixels) and edge endpoints.

    Horizontal edges come first (row-major over ``(v, u)`` with ``u < W-1``), then
    vertical edges (``v < H-1``). Returns ``(G, p, q)`` with ``G z = z[q] - z[p]``.
    """
    idx = np.arange(height * width).reshape(height, width)
    p = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    q = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    m = len(p)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([q, p])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    G = sp.csr_matrix((vals, (rows, cols)), shape=(m, height * width))
    G.sort_indices()
    return G, p, q


def edge_values(grid: np.ndarray) -> np.ndarray:
    """Forward differences of a ``(H, W)`` or ``(H, W, C)`` grid on the edge list."""
    h, w = grid.shape[:2]
    gu = grid[:, 1:] - grid[:, :-1]
    gv = grid[1:] - grid[:-1]
    if grid.ndim == 3:
        return np.concatenate([gu.reshape(-1, grid.shape[2]), gv.reshape(-1, grid.shape[2])])
    return np.concatenate([gu.ravel(), gv.ravel()])


def pixel_to_edges(weight: np.ndarray) -> np.ndarray:
    """Give each edge the weight of its source (left or top) pixel."""
    return np.concatenate([weight[:, :-1].ravel(), weight[:-1, :].ravel()])


def min_to_edges(weight: np.ndarray) -> np.ndarray:
    """Give each edge the smaller weight of its two endpoints."""
    return np.concatenate(
        [np.minimum(weight[:, :-1], weight[:, 1:]).ravel(), np.minimum(weight[:-1], weight[1:]).ravel()]
    )


def assemble(
    shape: tuple[int, int],
    edge_weight: np.ndarray,
    data_weight: np.ndarray,
    data_target: np.ndarray,
    edge_target: np.ndarray | None = None,
    check: bool = True,
):
    """Build ``(A, b)`` for the quadratic energy described in the module docstring.

    Args:
        shape: ``(H, W)`` of the grid.
        edge_weight: ``a_e`` per edge, nonnegative.
        data_weight: ``d_x`` per pixel ``(H, W)``, nonnegative.
        data_target: ``y_x`` per pixel, ``(H, W)`` or ``(H, W, C)``.
        edge_target: ``g_e`` per edge, ``(E,)`` or ``(E, C)``; zero when omitted.
        check: verify finiteness and the diagonal-dominance SPD certificate.
    """
    h, w = shape
    n = h * w
    G, _, _ = difference_operator(h, w)
    a = np.asarray(edge_weight, dtype=np.float64)
    d = np.asarray(data_weight, dtype=np.float64).ravel()
    y = np.asarray(data_target, dtype=np.float64).reshape(n, -1)
    if check:
        for name, arr in (("edge weight", a), ("data weight", d), ("data target", y)):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInput(f"{name} contains non-finite values")
        if edge_target is not None and not np.all(np.isfinite(edge_target)):
            raise NonFiniteInput("edge target contains non-finite values")
    A = (G.T @ sp.diags(a) @ G + sp.diags(d)).tocsr()
    b = d[:, None] * y
    if edge_target is not None:
        g = np.asarray(edge_target, dtype=np.float64).reshape(len(a), -1)
        b = b + G.T @ (a[:, None] * g)
    if check:
        check_spd(A, d, a)
    if np.ndim(data_target) == 2:
        b = b[:, 0]
    return A, b


def check_spd(A: sp.spmatrix, data_weight: np.ndarray, edge_weight: np.ndarray) -> None:
    """Diagonal-dominance certificate of positive definiteness.

    The assembled matrix is a weighted graph Laplacian plus a nonnegative
    diagonal, hence weakly diagonally dominant with nonpositive off-diagonals.
    It is nonsingular when every connected component of the edge graph carries
    some data weight; components are found from the strictly positive edges.

    Raises:
        SingularSystem: if either condition fails.
    """
    A = A.tocsr()
    diag = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    if np.any(edge_weight < 0) or np.any(data_weight < 0):
        raise SingularSystem("negative weights break symmetric positive definiteness")
    if np.any(diag + 1e-12 * np.maximum(1.0, off) < off):
        raise SingularSystem("assembled matrix is not diagonally dominant")
    if not np.any(data_weight > 0):
        raise SingularSystem("no data term: the smoothness term alone has constants in its null space")
    if np.all(edge_weight > 0):
        return
    from scipy.sparse.csgraph import connected_components

    n = A.shape[0]
    offdiag = A - sp.diags(diag)
    ncomp, labels = connected_components(offdiag != 0, directed=False)
    if ncomp == 1:
        return
    has_data = np.zeros(ncomp, dtype=bool)
    has_data[labels[data_weight > 0]] = True
    if not has_data.all():
        raise SingularSystem(f"{int((~has_data).sum())} of {ncomp} grid components carry no data term (n={n})")
