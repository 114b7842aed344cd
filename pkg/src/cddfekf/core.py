"""Shared filter plumbing: state containers, run results and the run loop."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
import scipy.linalg
from scipy.linalg import LinAlgWarning

from .errors import FilterBreakdown, NonFiniteOutput, SingularResidualCovariance
from .linalg import SvdFactor

DIVERGENCE_BOUND = 1e12


@dataclass(frozen=True)
class FilterState:
    """Time, state estimate and covariance representation.

    ``cov`` is a full matrix for conventional filters, a lower-triangular
    factor or a :class:`SvdFactor` for square-root filters. Arrays may carry
    leading batch axes (one per Monte Carlo run).
    """

    t: float
    x_hat: np.ndarray
    cov: Any
    kind: str = "full"

    def covariance(self) -> np.ndarray:
        return reconstruct(self.cov, self.kind)


def reconstruct(cov, kind: str) -> np.ndarray:
    if kind == "full":
        return cov
    if kind == "cholesky":
        return cov @ np.swapaxes(cov, -1, -2)
    if kind == "svd":
        return cov.covariance()
    raise ValueError(f"unknown covariance kind {kind!r}")


def _cov_arrays(cov) -> tuple:
    return tuple(cov) if isinstance(cov, SvdFactor) else (cov,)


def check_state(state: FilterState) -> None:
    """Raise if the state has non-finite entries or has diverged."""
    for arr in (state.x_hat,) + _cov_arrays(state.cov):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteOutput("non-finite entry in filter state")
    if np.max(np.abs(state.x_hat)) > DIVERGENCE_BOUND:
        raise NonFiniteOutput("state estimate exceeded divergence bound")


@dataclass
class RunResult:
    """Outcome of one filter run over a measurement sequence.

    ``estimates[..., k, :]`` is the filtered estimate at ``times[k]``. On
    failure the arrays hold the steps completed before the breakdown.
    """

    times: np.ndarray
    estimates: np.ndarray
    covariances: Optional[np.ndarray] = None
    status: str = "completed"
    failed_step: Optional[int] = None
    cause: Optional[str] = None
    extra: dict = field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return self.status == "completed"


def run_loop(
    init: FilterState,
    predict: Callable[[FilterState, float], FilterState],
    update: Callable[[FilterState, np.ndarray, int], FilterState],
    times: np.ndarray,
    z: np.ndarray,
    store_covariance: bool = False,
) -> RunResult:
    """Alternate prediction to ``times[k]`` and update with ``z[..., k, :]``.

    Any :class:`FilterBreakdown` is captured into the result's status, with
    the 1-based measurement index at which it happened.
    """
    times = np.asarray(times, dtype=float)
    z = np.asarray(z, dtype=float)
    n = init.x_hat.shape[-1]
    batch = init.x_hat.shape[:-1]
    estimates = np.empty(batch + (len(times), n))
    covs = np.empty(batch + (len(times), n, n)) if store_covariance else None
    state = init
    for k in range(len(times)):
        try:
            state = predict(state, times[k])
            state = update(state, z[..., k, :], k + 1)
            check_state(state)
        except FilterBreakdown as exc:
            return RunResult(
                times[:k],
                estimates[..., :k, :],
                None if covs is None else covs[..., :k, :, :],
                status="failed",
                failed_step=k + 1,
                cause=f"{type(exc).__name__}: {exc}",
            )
        estimates[..., k, :] = state.x_hat
        if covs is not None:
            covs[..., k, :, :] = state.covariance()
    return RunResult(times, estimates, covs)


def integrate_interval(
    state: FilterState, model, big_delta: float, substep, l_subdivisions: int
) -> FilterState:
    """Apply ``l_subdivisions`` substeps of size ``big_delta / l_subdivisions``.

    Substep ``l`` starts at node ``t0 + l * delta`` for ``l = 0 .. L-1``, so
    the mesh is traversed completely and the result sits at ``t0 + big_delta``.
    """
    if not big_delta > 0:
        raise ValueError("prediction interval must be positive")
    delta = big_delta / l_subdivisions
    t0 = state.t
    for l in range(l_subdivisions):
        state = substep(FilterState(t0 + l * delta, state.x_hat, state.cov, state.kind), model, delta)
    return FilterState(t0 + big_delta, state.x_hat, state.cov, state.kind)


def solve_gain(re: np.ndarray, pxz: np.ndarray) -> np.ndarray:
    """Gain ``K = Pxz Re^{-1}`` from ``Re K^T = Pxz^T`` without forming an inverse.

    Uses the symmetric-indefinite factorization of ``Re``. A residual
    covariance that is singular or singular to working precision (reciprocal
    condition number below machine epsilon) raises
    :class:`SingularResidualCovariance`.
    """
    re = np.asarray(re)
    pxz = np.asarray(pxz)
    batch = np.broadcast_shapes(re.shape[:-2], pxz.shape[:-2])
    re_b = np.broadcast_to(re, batch + re.shape[-2:]).reshape((-1,) + re.shape[-2:])
    pxz_b = np.broadcast_to(pxz, batch + pxz.shape[-2:]).reshape((-1,) + pxz.shape[-2:])
    out = np.empty_like(pxz_b)
    with warnings.catch_warnings():
        warnings.simplefilter("error", LinAlgWarning)
        for i in range(re_b.shape[0]):
            try:
                kt = scipy.linalg.solve(re_b[i], pxz_b[i].T, assume_a="sym", check_finite=False)
            except (np.linalg.LinAlgError, LinAlgWarning, ValueError) as exc:
                raise SingularResidualCovariance(str(exc)) from None
            out[i] = kt.T
    return out.reshape(batch + pxz.shape[-2:])


def solve_triangular_batched(a: np.ndarray, b: np.ndarray, lower: bool) -> np.ndarray:
    """Solve ``a x = b`` for triangular ``a`` by substitution over stacked inputs.

    Raises :class:`SingularResidualCovariance` when a diagonal entry is zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diag = np.diagonal(a, axis1=-2, axis2=-1)
    if np.any(diag == 0.0):
        raise SingularResidualCovariance("triangular factor has a zero diagonal entry")
    m = a.shape[-1]
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    x = np.zeros(batch + b.shape[-2:])
    rows = range(m) if lower else range(m - 1, -1, -1)
    for i in rows:
        acc = b[..., i, :] - np.einsum("...j,...jk->...k", a[..., i, :], x)
        x[..., i, :] = acc / diag[..., i, None]
    return x
