"""Continuous-discrete stochastic model and its derivative providers.

The model is

    dx = f(t, x) dt + G dbeta,   E[dbeta dbeta^T] = Q dt,
    z_k = h(k, x(t_k)) + v_k,    v_k ~ N(0, R),

with a time-invariant, state-independent diffusion matrix ``G``.

Drift and observation callables are vectorized over leading axes: the state
is the last axis, so ``drift(t, x)`` maps an array of shape ``(..., n)`` to
``(..., n)`` and ``observation(k, x)`` maps ``(..., n)`` to ``(..., m)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteOutput
from .linalg import lower_cholesky

Drift = Callable[[float, np.ndarray], np.ndarray]
Observation = Callable[[int, np.ndarray], np.ndarray]

FD_REL_STEP = 1e-6
FD_TIME_STEP = 1e-6
FD_HESSIAN_REL_STEP = 1e-4


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Continuous-discrete model description.

    Optional providers (``drift_jacobian``, ``drift_time_partial``,
    ``drift_hessian_contraction``, ``observation_jacobian``) replace the
    finite-difference fallbacks when given. ``drift_hessian_contraction``
    must return ``0.5 * sum_j sum_{p,r} G*_pj G*_rj d2f/dx_p dx_r``.
    """

    drift: Drift
    observation: Observation
    g: np.ndarray
    q_cov: np.ndarray
    r_cov: np.ndarray
    x0_mean: np.ndarray
    p0: np.ndarray
    drift_jacobian: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    drift_time_partial: Optional[Drift] = None
    drift_hessian_contraction: Optional[Drift] = None
    observation_jacobian: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    name: str = "model"

    def __post_init__(self):
        for field in ("g", "q_cov", "r_cov", "x0_mean", "p0"):
            value = np.array(getattr(self, field), dtype=float)
            value.setflags(write=False)
            object.__setattr__(self, field, value)
        n = self.x0_mean.shape[0]
        if self.g.shape[0] != n or self.p0.shape != (n, n):
            raise ValueError("g and p0 must match the state dimension of x0_mean")
        q = self.g.shape[1]
        if self.q_cov.shape != (q, q):
            raise ValueError(f"q_cov must be {q}x{q}")
        if self.r_cov.shape[0] != self.r_cov.shape[1]:
            raise ValueError("r_cov must be square")

    @property
    def n(self) -> int:
        return self.x0_mean.shape[0]

    @property
    def m(self) -> int:
        return self.r_cov.shape[0]

    @property
    def q(self) -> int:
        return self.g.shape[1]

    @cached_property
    def q_sqrt(self) -> np.ndarray:
        return lower_cholesky(self.q_cov)

    @cached_property
    def r_sqrt(self) -> np.ndarray:
        return lower_cholesky(self.r_cov)

    @cached_property
    def gstar(self) -> np.ndarray:
        """``G Q^{1/2}`` with the lower Cholesky factor of ``Q``."""
        return self.g @ self.q_sqrt

    @cached_property
    def process_cov(self) -> np.ndarray:
        """``G Q G^T`` (per unit time)."""
        return self.gstar @ self.gstar.T


def _checked(values: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteOutput(f"{what} returned non-finite values")
    return values


def _fd_steps(x: np.ndarray) -> np.ndarray:
    return FD_REL_STEP * np.maximum(1.0, np.abs(x))


def jacobian(model: ModelSpec, t: float, x: np.ndarray) -> np.ndarray:
    """Drift Jacobian ``df/dx`` at ``(t, x)``, shape ``(..., n, n)``.

    Uses the analytic provider if present, otherwise central differences
    with steps ``1e-6 * max(1, |x_i|)``.
    """
    x = np.asarray(x, dtype=float)
    if model.drift_jacobian is not None:
        return _checked(model.drift_jacobian(t, x), "drift_jacobian")
    return _fd_jacobian(model.drift, t, x, "drift")


def _fd_jacobian(fn: Drift, t: float, x: np.ndarray, what: str) -> np.ndarray:
    n = x.shape[-1]
    h = _fd_steps(x)
    eye = np.eye(n)
    # probes[..., j, :] = x +/- h_j e_j
    offsets = eye * h[..., None, :]
    probes = np.concatenate([x[..., None, :] + offsets, x[..., None, :] - offsets], axis=-2)
    values = _checked(fn(t, probes), what)
    diff = (values[..., :n, :] - values[..., n:, :]) / (2.0 * h[..., :, None])
    return np.swapaxes(diff, -1, -2)


def l_matrix(model: ModelSpec, t: float, x: np.ndarray) -> np.ndarray:
    """The ``n x q`` matrix with entries ``L_j f_i = sum_m G*_mj df_i/dx_m``."""
    return jacobian(model, t, x) @ model.gstar


def time_partial(model: ModelSpec, t: float, x: np.ndarray) -> np.ndarray:
    if model.drift_time_partial is not None:
        return _checked(model.drift_time_partial(t, x), "drift_time_partial")
    f0 = _checked(model.drift(t, x), "drift")
    f1 = _checked(model.drift(t + FD_TIME_STEP, x), "drift")
    return (f1 - f0) / FD_TIME_STEP


def hessian_contraction(model: ModelSpec, t: float, x: np.ndarray) -> np.ndarray:
    """``0.5 * sum_j D^2 f[g_j, g_j]`` over the columns ``g_j`` of ``G*``."""
    if model.drift_hessian_contraction is not None:
        return _checked(model.drift_hessian_contraction(t, x), "drift_hessian_contraction")
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    f0 = None
    scale = FD_HESSIAN_REL_STEP * np.maximum(1.0, np.max(np.abs(x), axis=-1, keepdims=True))
    for g_col in model.gstar.T:
        norm = np.linalg.norm(g_col)
        if norm == 0.0:
            continue
        if f0 is None:
            f0 = _checked(model.drift(t, x), "drift")
        h = scale / norm
        fp = _checked(model.drift(t, x + h * g_col), "drift")
        fm = _checked(model.drift(t, x - h * g_col), "drift")
        total = total + (fp - 2.0 * f0 + fm) / h**2
    return 0.5 * total


def l0_apply(model: ModelSpec, t: float, x: np.ndarray) -> np.ndarray:
    """Apply the Ito generator ``L_0`` to the drift at ``(t, x)``."""
    x = np.asarray(x, dtype=float)
    f = _checked(model.drift(t, x), "drift")
    jf = np.einsum("...ij,...j->...i", jacobian(model, t, x), f)
    return time_partial(model, t, x) + jf + hessian_contraction(model, t, x)


def observation_jacobian(model: ModelSpec, k: int, x: np.ndarray) -> np.ndarray:
    """Observation Jacobian ``dh/dx``, shape ``(..., m, n)``."""
    x = np.asarray(x, dtype=float)
    if model.observation_jacobian is not None:
        return _checked(model.observation_jacobian(k, x), "observation_jacobian")
    return _fd_jacobian(lambda _t, y: model.observation(k, y), 0.0, x, "observation")
