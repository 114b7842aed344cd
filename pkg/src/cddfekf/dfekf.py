"""Conventional continuous-discrete derivative-free EKF.

The covariance is carried as a full matrix. At every integration substep and
at every measurement update a square root of the covariance is extracted
(Cholesky or SVD) to place ``n`` sample points around the estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FilterState, RunResult, integrate_interval, run_loop, solve_gain
from .linalg import lower_cholesky, svd_sqrt
from .model import ModelSpec, l_matrix
from .sde import DRIFT_MAPS

SCHEMES = ("em", "it")
SAMPLE_SQRTS = ("cholesky", "svd")


@dataclass(frozen=True)
class DfekfConfig:
    alpha: float = 1000.0
    l_subdivisions: int = 1
    scheme: str = "em"
    sample_sqrt: str = "cholesky"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.l_subdivisions < 1:
            raise ValueError("l_subdivisions must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.sample_sqrt not in SAMPLE_SQRTS:
            raise ValueError(f"sample_sqrt must be one of {SAMPLE_SQRTS}")


def sample_matrix(x_hat: np.ndarray, sqrt_factor: np.ndarray, alpha: float) -> np.ndarray:
    """``n`` sample points ``x_hat + sqrt(n)/alpha * S[:, i]`` stored as columns."""
    n = sqrt_factor.shape[-1]
    return x_hat[..., :, None] + (math.sqrt(n) / alpha) * sqrt_factor


def center_scale(points: np.ndarray, center: np.ndarray, alpha: float) -> np.ndarray:
    """Centered and scaled matrix ``alpha/sqrt(n) * (points - center 1^T)``.

    ``n`` is the number of sample points (columns).
    """
    n = points.shape[-1]
    return (alpha / math.sqrt(n)) * (points - center[..., :, None])


def covariance_sqrt(p: np.ndarray, method: str) -> np.ndarray:
    """Square root of a full covariance used to generate sample points."""
    if method == "cholesky":
        return lower_cholesky(p, check_symmetry=False)
    return svd_sqrt(p, check_symmetry=False).sqrt()


def propagate_spread(
    model: ModelSpec, t: float, x_hat: np.ndarray, sqrt_factor: np.ndarray, delta: float,
    alpha: float, scheme: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Push sample points through the discretized drift.

    Returns the predicted mean ``f_d(t, x_hat)`` and the centered, scaled
    propagated sample matrix.
    """
    drift_map = DRIFT_MAPS[scheme]
    n = sqrt_factor.shape[-1]
    # sample points as rows plus the mean as the last row, so one drift call
    # maps all of them with the state on the last axis
    rows = x_hat[..., None, :] + (math.sqrt(n) / alpha) * np.swapaxes(sqrt_factor, -1, -2)
    mapped = drift_map(model, t, np.concatenate([rows, x_hat[..., None, :]], axis=-2), delta)
    x_next = mapped[..., -1, :]
    spread = (alpha / math.sqrt(n)) * (mapped[..., :-1, :] - mapped[..., -1:, :])
    return x_next, np.swapaxes(spread, -1, -2)


def it_noise_terms(model: ModelSpec, t: float, x_hat: np.ndarray, delta: float) -> np.ndarray:
    """Additive covariance of the order-1.5 scheme noise, with ``L f`` at the estimate."""
    lf = l_matrix(model, t, x_hat)
    gs = model.gstar
    cross = gs @ np.swapaxes(lf, -1, -2)
    return (
        delta * model.process_cov
        + 0.5 * delta**2 * (cross + np.swapaxes(cross, -1, -2))
        + delta**3 / 3.0 * lf @ np.swapaxes(lf, -1, -2)
    )


def em_predict_substep(state: FilterState, model: ModelSpec, delta: float, cfg: DfekfConfig) -> FilterState:
    sqrt_p = covariance_sqrt(state.cov, cfg.sample_sqrt)
    x_next, fxbar = propagate_spread(model, state.t, state.x_hat, sqrt_p, delta, cfg.alpha, "em")
    p_next = fxbar @ np.swapaxes(fxbar, -1, -2) + delta * model.process_cov
    return FilterState(state.t + delta, x_next, p_next)


def it_predict_substep(state: FilterState, model: ModelSpec, delta: float, cfg: DfekfConfig) -> FilterState:
    sqrt_p = covariance_sqrt(state.cov, cfg.sample_sqrt)
    x_next, fxbar = propagate_spread(model, state.t, state.x_hat, sqrt_p, delta, cfg.alpha, "it")
    p_next = fxbar @ np.swapaxes(fxbar, -1, -2) + it_noise_terms(model, state.t, state.x_hat, delta)
    return FilterState(state.t + delta, x_next, p_next)


def predict_interval(state: FilterState, model: ModelSpec, big_delta: float, cfg: DfekfConfig) -> FilterState:
    """Propagate ``(x_hat, P)`` across one sampling interval of length ``big_delta``."""
    substep = em_predict_substep if cfg.scheme == "em" else it_predict_substep
    return integrate_interval(
        state, model, big_delta, lambda s, mdl, d: substep(s, mdl, d, cfg), cfg.l_subdivisions
    )


def measurement_spread(
    model: ModelSpec, k: int, x_hat: np.ndarray, sqrt_factor: np.ndarray, alpha: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(z_hat, Xbar, Zbar)`` for the measurement update at step ``k``."""
    points = sample_matrix(x_hat, sqrt_factor, alpha)
    z_hat = model.observation(k, x_hat)
    z_points = np.swapaxes(model.observation(k, np.swapaxes(points, -1, -2)), -1, -2)
    return z_hat, center_scale(points, x_hat, alpha), center_scale(z_points, z_hat, alpha)


def measurement_update(
    state: FilterState, z: np.ndarray, model: ModelSpec, cfg: DfekfConfig, k: int = 1
) -> FilterState:
    """Conventional update; the covariance is not symmetrized afterwards."""
    sqrt_p = covariance_sqrt(state.cov, cfg.sample_sqrt)
    z_hat, xbar, zbar = measurement_spread(model, k, state.x_hat, sqrt_p, cfg.alpha)
    re = zbar @ np.swapaxes(zbar, -1, -2) + model.r_cov
    pxz = xbar @ np.swapaxes(zbar, -1, -2)
    gain = solve_gain(re, pxz)
    x_new = state.x_hat + np.einsum("...ij,...j->...i", gain, z - z_hat)
    p_new = state.cov - gain @ re @ np.swapaxes(gain, -1, -2)
    return FilterState(state.t, x_new, p_new)


def initial_state(model: ModelSpec, batch: tuple = ()) -> FilterState:
    x0 = np.broadcast_to(model.x0_mean, batch + (model.n,)).copy()
    p0 = np.broadcast_to(model.p0, batch + (model.n, model.n)).copy()
    return FilterState(0.0, x0, p0)


def run_conventional(
    model: ModelSpec, cfg: DfekfConfig, times: np.ndarray, z: np.ndarray, store_covariance: bool = False
) -> RunResult:
    """Run the conventional DF-EKF over measurements ``z[..., k, :]`` taken at ``times[k]``.

    Leading axes of ``z`` are independent runs processed together.
    """
    z = np.asarray(z, dtype=float)

    def predict(state, t_next):
        return predict_interval(state, model, t_next - state.t, cfg)

    def update(state, z_k, k):
        return measurement_update(state, z_k, model, cfg, k)

    init = initial_state(model, z.shape[:-2])
    return run_loop(init, predict, update, times, z, store_covariance)
