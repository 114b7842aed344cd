"""Factorization kernels used by the conventional and square-root filters.

All routines accept stacked inputs: any leading axes are treated as a batch
and the factorization is applied to the trailing two axes independently.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.linalg import lapack

from .errors import NonFiniteInput, NotPositiveDefinite

SYMMETRY_RTOL = 1e-10


class SvdFactor(NamedTuple):
    """SVD square-root factor ``w @ diag(s)`` of a symmetric PSD matrix.

    ``w`` is orthogonal and ``s`` holds the square roots of the singular
    values in non-increasing order, so ``w @ diag(s**2) @ w.T`` is the
    factored matrix.
    """

    w: np.ndarray
    s: np.ndarray

    def sqrt(self) -> np.ndarray:
        """Return the (generally full) square root ``w @ diag(s)``."""
        return self.w * self.s[..., None, :]

    def covariance(self) -> np.ndarray:
        s2 = self.s**2
        return (self.w * s2[..., None, :]) @ np.swapaxes(self.w, -1, -2)


def _mT(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _require_finite(a: np.ndarray, name: str) -> None:
    if not np.isfinite(a).all():
        raise NonFiniteInput(f"{name} contains non-finite entries")


def _require_symmetric(p: np.ndarray) -> None:
    if p.shape[-1] != p.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {p.shape}")
    scale = np.linalg.norm(p, axis=(-2, -1))
    asym = np.linalg.norm(p - _mT(p), axis=(-2, -1))
    if np.any(asym > SYMMETRY_RTOL * scale):
        raise ValueError("matrix is not symmetric within relative tolerance 1e-10")


@lru_cache(maxsize=None)
def _lower_mask(n: int) -> np.ndarray:
    return np.tri(n)


def _positive_diagonal(lower: np.ndarray) -> np.ndarray:
    # Flipping column j of the post-array equals right-multiplying the
    # implicit orthogonal transform by a signature matrix.
    return lower * np.copysign(1.0, lower.diagonal(0, -2, -1))[..., None, :]


def lower_cholesky(p: np.ndarray, check_symmetry: bool = True) -> np.ndarray:
    """Lower-triangular Cholesky factor ``L`` with ``L @ L.T == p``.

    Only the lower triangle of ``p`` is read. Raises
    :class:`NotPositiveDefinite` when a pivot is not positive; filters treat
    that as a breakdown.
    """
    p = np.asarray(p, dtype=float)
    _require_finite(p, "p")
    if check_symmetry:
        _require_symmetric(p)
    if p.ndim == 2:
        c, info = lapack.dpotrf(p, lower=1, clean=1)
        if info > 0:
            raise NotPositiveDefinite(f"Matrix is not positive definite (leading minor {info})")
        if info < 0:
            raise ValueError(f"dpotrf failed with info={info}")
        return c
    try:
        return np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def triangularize_lower(a: np.ndarray) -> np.ndarray:
    """Lower-triangulate the pre-array ``a`` (n x m, m >= n).

    Returns the n x n lower-triangular ``L`` with non-negative diagonal such
    that ``[a] Theta = [L 0]`` for some orthogonal ``Theta``; equivalently
    ``L @ L.T == a @ a.T``. Computed from the R factor of ``a.T`` so the
    orthogonal factor is never formed.
    """
    a = np.asarray(a, dtype=float)
    _require_finite(a, "pre-array")
    n, m = a.shape[-2:]
    if m < n:
        raise ValueError(f"pre-array must have at least as many columns as rows, got {n}x{m}")
    if a.ndim == 2:
        # direct LAPACK call: the numpy wrapper dominates the cost at this size
        qr, _, _, info = lapack.dgeqrf(a.T)
        if info != 0:
            raise ValueError(f"dgeqrf failed with info={info}")
        return _positive_diagonal(qr[:n].T * _lower_mask(n))
    r = np.linalg.qr(_mT(a), mode="r")
    return _positive_diagonal(_mT(r))


def block_triangularize(
    zbar: np.ndarray, xbar: np.ndarray, r_sqrt: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Triangularize the combined measurement-update pre-array.

    The pre-array is ``[[zbar, r_sqrt], [xbar, 0]]``; the post-array is
    ``[[re_sqrt, 0], [pxz_bar, p_sqrt]]``. Returns
    ``(re_sqrt, pxz_bar, p_sqrt)``.
    """
    zbar = np.asarray(zbar, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    r_sqrt = np.asarray(r_sqrt, dtype=float)
    m = zbar.shape[-2]
    n = xbar.shape[-2]
    batch = np.broadcast_shapes(zbar.shape[:-2], xbar.shape[:-2], r_sqrt.shape[:-2])
    top = np.concatenate(
        [np.broadcast_to(zbar, batch + zbar.shape[-2:]), np.broadcast_to(r_sqrt, batch + (m, m))],
        axis=-1,
    )
    bottom = np.concatenate(
        [np.broadcast_to(xbar, batch + xbar.shape[-2:]), np.zeros(batch + (n, m))], axis=-1
    )
    post = triangularize_lower(np.concatenate([top, bottom], axis=-2))
    return post[..., :m, :m], post[..., m:, :m], post[..., m:, m:]


def _fix_signs(w: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    The n sample points sit on one side of the mean, so the column signs of
    ``w`` change the sample. A fixed rule makes a factor computed from a
    covariance and one computed from its array give the same points.
    """
    # the largest-magnitude entry is negative exactly when max + min < 0
    signs = np.copysign(1.0, np.maximum.reduce(w, axis=-2) + np.minimum.reduce(w, axis=-2))
    return w * signs[..., None, :]


def _left_svd(a: np.ndarray, full: bool) -> tuple[np.ndarray, np.ndarray]:
    if a.ndim == 2:
        # direct LAPACK call: the numpy wrapper dominates the cost at this size
        w, s, _, info = lapack.dgesdd(a, full_matrices=int(full))
        if info != 0:
            raise np.linalg.LinAlgError(f"SVD did not converge (dgesdd info={info})")
        return w, s
    w, s, _ = np.linalg.svd(a, full_matrices=full)
    return w, s


def svd_sqrt(p: np.ndarray, check_symmetry: bool = True) -> SvdFactor:
    """SVD square-root factor of a symmetric positive semidefinite matrix."""
    p = np.asarray(p, dtype=float)
    _require_finite(p, "p")
    if check_symmetry:
        _require_symmetric(p)
    w, sigma = _left_svd(p, full=True)
    return SvdFactor(_fix_signs(w), np.sqrt(sigma))


def svd_factor_of_array(a: np.ndarray) -> SvdFactor:
    """SVD factor ``(w, s)`` of ``a @ a.T`` computed from the array ``a``.

    ``w`` holds the left singular vectors of ``a`` and ``s`` its singular
    values; the right singular factor is discarded. When ``a`` has fewer
    columns than rows, ``s`` is padded with zeros.
    """
    a = np.asarray(a, dtype=float)
    _require_finite(a, "pre-array")
    n, m = a.shape[-2:]
    w, s = _left_svd(a, full=m < n)
    if m < n:
        s = np.concatenate([s, np.zeros(s.shape[:-1] + (n - m,))], axis=-1)
    return SvdFactor(_fix_signs(w), s)
