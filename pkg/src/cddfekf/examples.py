"""Seven-state coordinated-turn tracking model with an ill-conditioned sensor.

State ``[eps, eps_dot, eta, eta_dot, zeta, zeta_dot, omega]``: three
positions, their velocities and the turn rate. The two sensor rows are
identical except for ``1 + gamma`` in the turn-rate column, and the
measurement noise is ``gamma^2 I``, so the residual covariance becomes
singular to working precision as ``gamma`` shrinks.
"""

from __future__ import annotations

import math

import numpy as np

from .model import ModelSpec

TURN_RATE_DEG = 3.0
SIGMA1 = math.sqrt(0.2)
SIGMA2 = 0.007

TURN_RATE_UNITS = ("rad", "deg")


def turn_rate(units: str = "rad") -> float:
    """Initial turn rate ``3 deg/s`` expressed as the number stored in the state."""
    if units == "rad":
        return math.radians(TURN_RATE_DEG)
    if units == "deg":
        return TURN_RATE_DEG
    raise ValueError(f"turn-rate units must be one of {TURN_RATE_UNITS}, got {units!r}")


def ct_drift(t, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    # positions move with the velocities in slots 1, 3, 5
    out[..., 0:5:2] = x[..., 1:6:2]
    out[..., 1] = -x[..., 6] * x[..., 3]
    out[..., 3] = x[..., 6] * x[..., 1]
    return out


def ct_jacobian(t, x):
    x = np.asarray(x, dtype=float)
    jac = np.zeros(x.shape + (7,))
    jac[..., 0, 1] = 1.0
    jac[..., 1, 3] = -x[..., 6]
    jac[..., 1, 6] = -x[..., 3]
    jac[..., 2, 3] = 1.0
    jac[..., 3, 1] = x[..., 6]
    jac[..., 3, 6] = x[..., 1]
    jac[..., 4, 5] = 1.0
    return jac


def _zero_rate(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


def sensor_matrix(gamma: float) -> np.ndarray:
    h = np.ones((2, 7))
    h[1, 6] = 1.0 + gamma
    return h


def build_coordinated_turn(gamma: float, turn_rate_units: str = "rad") -> ModelSpec:
    """Coordinated-turn model observed by the ill-conditioned two-row sensor.

    The drift is autonomous, and the diffusion is diagonal while the only
    non-zero second derivatives of the drift are mixed ones, so the time
    partial and the Hessian term of ``L_0 f`` vanish identically.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    h = sensor_matrix(gamma)
    x0 = np.array([1000.0, 0.0, 2650.0, 150.0, 200.0, 0.0, turn_rate(turn_rate_units)])

    def observation(k, x):
        return np.asarray(x, dtype=float) @ h.T

    def observation_jacobian(k, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(h, x.shape[:-1] + h.shape)

    return ModelSpec(
        drift=ct_drift,
        observation=observation,
        g=np.diag([0.0, SIGMA1, 0.0, SIGMA1, 0.0, SIGMA1, SIGMA2]),
        q_cov=np.eye(7),
        r_cov=gamma**2 * np.eye(2),
        x0_mean=x0,
        p0=np.eye(7),
        drift_jacobian=ct_jacobian,
        drift_time_partial=_zero_rate,
        drift_hessian_contraction=_zero_rate,
        observation_jacobian=observation_jacobian,
        name=f"coordinated-turn(gamma={gamma:g})",
    )
