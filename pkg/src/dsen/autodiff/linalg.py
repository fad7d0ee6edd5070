"""Differentiable matrix decompositions used by the correlation loss.

Only the gradient paths the loss needs are defined: the singular values of
``svd`` (exact per-value gradient u_k v_k^T, hence d(sum s) = U V^T), and the
symmetric inverse square root via the Daleckii-Krein formula on the
eigendecomposition. Singular/eigen vectors are returned as plain arrays and
carry no gradient.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import NumericError, ShapeError
from .tensor import Tensor

__all__ = ["SvdResult", "svd", "nuclear_norm", "sym_inv_sqrt"]


class SvdResult(NamedTuple):
    u: np.ndarray
    s: Tensor
    v: np.ndarray


def svd(matrix: Tensor) -> SvdResult:
    """Singular value decomposition ``matrix = U diag(s) V^T``.

    ``s`` is nonnegative, descending, and differentiable with respect to the
    input (ds_k = u_k^T dM v_k, exact for simple singular values). ``u`` and
    ``v`` are constants.
    """
    matrix = Tensor.lift(matrix)
    if matrix.ndim != 2:
        raise ShapeError("svd expects a 2-D tensor")
    try:
        u, s_data, vt = np.linalg.svd(matrix.data, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"svd did not converge: {exc}") from exc

    def backward(g):
        if matrix.requires_grad:
            matrix._accumulate((u * g[None, :]) @ vt)

    s = Tensor._from_op(s_data, (matrix,), backward, "svd_values")
    return SvdResult(u=u, s=s, v=vt.T)


def nuclear_norm(matrix: Tensor) -> Tensor:
    """Sum of singular values; gradient U V^T."""
    return svd(matrix).s.sum()


def sym_inv_sqrt(matrix: Tensor, clamp_eps: float = 1e-12) -> Tensor:
    """Inverse square root of a symmetric positive-definite matrix.

    The input is symmetrized, eigendecomposed, and eigenvalues below
    ``clamp_eps`` are clamped (their gradient contribution is zero). An
    eigenvalue below ``-clamp_eps`` after symmetrization raises
    ``NumericError``.
    """
    matrix = Tensor.lift(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ShapeError("sym_inv_sqrt expects a square 2-D tensor")
    sym = 0.5 * (matrix.data + matrix.data.T)
    try:
        w, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    if np.any(w < -clamp_eps):
        raise NumericError(
            f"matrix is not positive semi-definite (min eigenvalue {w.min():.3e})"
        )
    clamped = w < clamp_eps
    w_safe = np.where(clamped, clamp_eps, w)
    f = w_safe**-0.5
    out_data = (vecs * f[None, :]) @ vecs.T

    fprime = np.where(clamped, 0.0, -0.5 * w_safe**-1.5)

    def backward(g):
        if not matrix.requires_grad:
            return
        # Loewner matrix K_ij = (f_i - f_j) / (w_i - w_j), K_ii = f'(w_i).
        dw = w_safe[:, None] - w_safe[None, :]
        df = f[:, None] - f[None, :]
        near = np.abs(dw) < 1e-9 * (1.0 + np.abs(w_safe[:, None]) + np.abs(w_safe[None, :]))
        k = np.where(near, 0.5 * (fprime[:, None] + fprime[None, :]), df / np.where(near, 1.0, dw))
        g_sym = 0.5 * (g + g.T)
        inner = vecs.T @ g_sym @ vecs
        matrix._accumulate(vecs @ (k * inner) @ vecs.T)

    return Tensor._from_op(out_data, (matrix,), backward, "sym_inv_sqrt")
