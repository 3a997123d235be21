"""Preconditioned conjugate gradient for sparse SPD systems.

Several right-hand sides sharing one matrix (the three color channels) are
iterated together, each column with its own step sizes.

Three preconditioners are available. ``"jacobi"`` is cheap per iteration but
the diffusion systems mix edge weights over ~9 orders of magnitude, where it
needs thousands of iterations. ``"ilu"`` (incomplete LU with a small drop
tolerance) usually converges in a handful, yet stalls on badly conditioned
frames. ``"lu"`` uses a complete sparse LU factor; on these 2D grid systems it
is about as cheap to build as the incomplete one, and PCG then converges in
one or two iterations to near machine precision.
"""

from __future__ import annotations

import logging
import warnings
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from ..errors import ToleranceNotReached

logger = logging.getLogger(__name__)


class PCGInfo(NamedTuple):
    iterations: int
    residual: float  # worst relative residual over columns
    converged: bool


ILU_DROP_TOL = 1e-5
ILU_FILL_FACTOR = 20


def make_preconditioner(A, kind: str = "lu"):
    """Return a function applying ``M^-1`` to an ``(N, k)`` block."""
    if callable(kind):
        return kind
    if kind == "lu":
        return sla.splu(sp.csc_matrix(A)).solve
    if kind == "jacobi":
        diag = np.asarray(A.diagonal(), dtype=np.float64)
        if np.any(diag <= 0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        m_inv = (1.0 / diag)[:, None]
        return lambda R: m_inv * R
    if kind == "ilu":
        ilu = sla.spilu(sp.csc_matrix(A), drop_tol=ILU_DROP_TOL, fill_factor=ILU_FILL_FACTOR)
        return ilu.solve
    raise ValueError(f"unknown preconditioner {kind!r}")


def pcg(
    A,
    b,
    x0=None,
    tol: float = 1e-10,
    maxiter: int = 500,
    preconditioner="lu",
    warn: bool = True,
):
    """Solve ``A x = b`` for SPD ``A`` (scipy sparse matrix or anything with ``@``).

    Args:
        A: symmetric positive-definite matrix of size ``N x N``.
        b: right-hand side ``(N,)`` or ``(N, k)``.
        x0: initial guess, same shape as ``b``; zeros when omitted.
        tol: stop once ``||b - A x|| <= tol * ||b||`` for every column.
        maxiter: iteration cap.
        preconditioner: ``"lu"``, ``"ilu"``, ``"jacobi"`` or a callable applying ``M^-1``.
        warn: emit :class:`ToleranceNotReached` when the cap is hit.

    Returns:
        ``(x, PCGInfo)``; on non-convergence ``x`` is the last iterate.
    """
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    B = b[:, None] if vector else b
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=np.float64).reshape(B.shape)
    R = B - A @ X
    ref = np.linalg.norm(B, axis=0)
    r0 = np.linalg.norm(R, axis=0)
    ref = np.where(ref > 0, ref, np.where(r0 > 0, r0, 1.0))
    target = tol * ref

    active = r0 > target
    if not active.any():
        return (X[:, 0] if vector else X), PCGInfo(0, float(np.max(r0 / ref)), True)
    apply_m = make_preconditioner(A, preconditioner)
    Z = apply_m(R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    while active.any() and it < maxiter:
        AP = A @ P
        pap = np.einsum("ij,ij->j", P, AP)
        alpha = np.where(active & (pap > 0), rz / np.where(pap > 0, pap, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        it += 1
        active &= np.linalg.norm(R, axis=0) > target
        Z = apply_m(R)
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new

    rel = float(np.max(np.linalg.norm(B - A @ X, axis=0) / ref))
    converged = not active.any()
    if not converged and warn:
        msg = f"PCG stopped after {it} iterations at relative residual {rel:.3g} (tol {tol:g})"
        logger.warning(msg)
        warnings.warn(msg, ToleranceNotReached, stacklevel=2)
    return (X[:, 0] if vector else X), PCGInfo(it, rel, converged)
