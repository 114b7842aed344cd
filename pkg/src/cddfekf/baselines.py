"""Comparison filters: Jacobian-based EKF and third-degree cubature KF.

Both are discretized with the same EM-0.5 or IT-1.5 drift maps and the same
additive noise terms as the derivative-free filters, so differences come
only from how the covariance is propagated through the nonlinearity.
"""

from __future__ import annotations

import numpy as np

from .core import FilterState, RunResult, integrate_interval, run_loop, solve_gain
from .dfekf import SCHEMES, it_noise_terms
from .linalg import lower_cholesky
from .errors import NonFiniteOutput
from .model import ModelSpec, _fd_steps, jacobian, l0_apply, observation_jacobian
from .sde import DRIFT_MAPS, columnwise

FAMILIES = ("ekf", "ckf")


def _mT(a):
    return np.swapaxes(a, -1, -2)


def _check_scheme(scheme: str) -> None:
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")


def scheme_noise(model: ModelSpec, t: float, x_hat: np.ndarray, delta: float, scheme: str) -> np.ndarray:
    if scheme == "em":
        return delta * model.process_cov
    return it_noise_terms(model, t, x_hat, delta)


def _map_and_transition(model: ModelSpec, t: float, x_hat: np.ndarray, delta: float, scheme: str):
    """Discretized drift image of ``x_hat`` and the Jacobian of the drift map there.

    EM: ``I + delta J``. IT: ``I + delta J + delta^2/2 D(L_0 f)`` where the
    last Jacobian is taken by central differences; its ``delta^2`` weight
    keeps the differencing error far below the other terms. ``L_0 f`` at the
    estimate and at the difference probes comes from one batched call.
    """
    n = x_hat.shape[-1]
    phi = np.eye(n) + delta * jacobian(model, t, x_hat)
    if scheme == "em":
        return DRIFT_MAPS["em"](model, t, x_hat, delta), phi
    h = _fd_steps(x_hat)
    offsets = np.eye(n) * h[..., None, :]
    center = x_hat[..., None, :]
    l0 = l0_apply(model, t, np.concatenate([center, center + offsets, center - offsets], axis=-2))
    x_next = x_hat + delta * model.drift(t, x_hat) + 0.5 * delta**2 * l0[..., 0, :]
    if not np.isfinite(x_next).all():
        raise NonFiniteOutput("it_drift produced non-finite values")
    dl0 = np.swapaxes((l0[..., 1 : n + 1, :] - l0[..., n + 1 :, :]) / (2.0 * h[..., :, None]), -1, -2)
    return x_next, phi + 0.5 * delta**2 * dl0


def transition_matrix(model: ModelSpec, t: float, x_hat: np.ndarray, delta: float, scheme: str) -> np.ndarray:
    """Jacobian of the discretized drift map at ``x_hat`` (see :func:`_map_and_transition`)."""
    return _map_and_transition(model, t, x_hat, delta, scheme)[1]


def ekf_predict_substep(state: FilterState, model: ModelSpec, delta: float, scheme: str) -> FilterState:
    _check_scheme(scheme)
    x_next, phi = _map_and_transition(model, state.t, state.x_hat, delta, scheme)
    p_next = phi @ state.cov @ _mT(phi) + scheme_noise(model, state.t, state.x_hat, delta, scheme)
    return FilterState(state.t + delta, x_next, p_next)


def ekf_measurement_update(state: FilterState, z: np.ndarray, model: ModelSpec, k: int = 1) -> FilterState:
    h = observation_jacobian(model, k, state.x_hat)
    re = h @ state.cov @ _mT(h) + model.r_cov
    pxz = state.cov @ _mT(h)
    gain = solve_gain(re, pxz)
    residual = np.asarray(z, dtype=float) - model.observation(k, state.x_hat)
    x_new = state.x_hat + np.einsum("...ij,...j->...i", gain, residual)
    p_new = state.cov - gain @ re @ _mT(gain)
    return FilterState(state.t, x_new, p_new)


def cubature_points(x_hat: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``2n`` points ``x_hat +/- sqrt(n) S[:, i]`` as columns, ``S`` the Cholesky factor of ``p``."""
    n = x_hat.shape[-1]
    s = np.sqrt(n) * lower_cholesky(p, check_symmetry=False)
    return x_hat[..., :, None] + np.concatenate([s, -s], axis=-1)


def _moments(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = points.mean(axis=-1)
    dev = points - mean[..., :, None]
    return mean, dev / np.sqrt(points.shape[-1])


def ckf_predict_substep(state: FilterState, model: ModelSpec, delta: float, scheme: str) -> FilterState:
    _check_scheme(scheme)
    points = cubature_points(state.x_hat, state.cov)
    propagated = columnwise(DRIFT_MAPS[scheme], model, state.t, points, delta)
    x_next, dev = _moments(propagated)
    p_next = dev @ _mT(dev) + scheme_noise(model, state.t, state.x_hat, delta, scheme)
    return FilterState(state.t + delta, x_next, p_next)


def ckf_measurement_update(state: FilterState, z: np.ndarray, model: ModelSpec, k: int = 1) -> FilterState:
    points = cubature_points(state.x_hat, state.cov)
    z_points = _mT(model.observation(k, _mT(points)))
    z_hat, zdev = _moments(z_points)
    _, xdev = _moments(points)
    re = zdev @ _mT(zdev) + model.r_cov
    pxz = xdev @ _mT(zdev)
    gain = solve_gain(re, pxz)
    residual = np.asarray(z, dtype=float) - z_hat
    x_new = state.x_hat + np.einsum("...ij,...j->...i", gain, residual)
    p_new = state.cov - gain @ re @ _mT(gain)
    return FilterState(state.t, x_new, p_new)


def run_baseline(
    model: ModelSpec,
    family: str,
    scheme: str,
    l_subdivisions: int,
    times: np.ndarray,
    z: np.ndarray,
    store_covariance: bool = False,
) -> RunResult:
    """Run the EKF or CKF with ``l_subdivisions`` substeps per sampling interval."""
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    _check_scheme(scheme)
    if l_subdivisions < 1:
        raise ValueError("l_subdivisions must be at least 1")
    substep = ekf_predict_substep if family == "ekf" else ckf_predict_substep
    update_fn = ekf_measurement_update if family == "ekf" else ckf_measurement_update
    z = np.asarray(z, dtype=float)

    def predict(state, t_next):
        return integrate_interval(
            state, model, t_next - state.t, lambda s, mdl, d: substep(s, mdl, d, scheme), l_subdivisions
        )

    def update(state, z_k, k):
        return update_fn(state, z_k, model, k)

    batch = z.shape[:-2]
    init = FilterState(
        0.0,
        np.broadcast_to(model.x0_mean, batch + (model.n,)).copy(),
        np.broadcast_to(model.p0, batch + (model.n, model.n)).copy(),
    )
    return run_loop(init, predict, update, times, z, store_covariance)
