"""Square-root derivative-free EKF variants.

Cholesky-based variants carry a lower-triangular factor ``P^{1/2}`` and
update it by orthogonal triangularization of pre-arrays (1a/2a: two arrays
in the update, 1b/2b: one combined array). SVD-based variants 1c/2c carry
``(W, s)`` with ``P = W diag(s^2) W^T``. No full covariance is factored
after initialization.
"""

from __future__ import annotations

import numpy as np

from .core import FilterState, RunResult, integrate_interval, run_loop, solve_triangular_batched
from .dfekf import DfekfConfig, measurement_spread, propagate_spread
from .errors import SingularResidualCovariance
from .linalg import (
    SvdFactor,
    block_triangularize,
    lower_cholesky,
    svd_factor_of_array,
    svd_sqrt,
    triangularize_lower,
)
from .model import ModelSpec, jacobian

VARIANTS = ("1a", "1b", "1c", "2a", "2b", "2c")
SVD_FLOOR = 1e-14


def _mT(a):
    return np.swapaxes(a, -1, -2)


def _batch_like(block: np.ndarray, ref: np.ndarray) -> np.ndarray:
    if ref.ndim == block.ndim:
        return block
    return np.broadcast_to(block, ref.shape[:-2] + block.shape[-2:])


def _predict_pre_array(fxbar, gstar, lf, delta, scheme):
    if scheme == "em":
        blocks = [fxbar, _batch_like(np.sqrt(delta) * gstar, fxbar)]
    else:
        blocks = [
            fxbar,
            np.sqrt(delta) * (gstar + 0.5 * delta * lf),
            np.sqrt(delta**3 / 12.0) * lf,
        ]
    return np.concatenate(blocks, axis=-1)


def predict_pre_array(
    state: FilterState, model: ModelSpec, delta: float, cfg: DfekfConfig, gstar=None
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x_next, pre_array)`` for one prediction substep.

    The sample square root is read from the held factor; ``gstar`` defaults
    to ``G Q^{1/2}`` with the Cholesky factor of ``Q``.
    """
    gstar = model.gstar if gstar is None else gstar
    sqrt_p = state.cov.sqrt() if state.kind == "svd" else state.cov
    x_next, fxbar = propagate_spread(model, state.t, state.x_hat, sqrt_p, delta, cfg.alpha, cfg.scheme)
    lf = jacobian(model, state.t, state.x_hat) @ gstar if cfg.scheme == "it" else None
    return x_next, _predict_pre_array(fxbar, gstar, lf, delta, cfg.scheme)


def sr_em_predict_substep(state: FilterState, model: ModelSpec, delta: float, cfg: DfekfConfig) -> FilterState:
    """EM substep on a Cholesky factor: ``P^{1/2} = tria([F̄X, sqrt(delta) G*])``."""
    if cfg.scheme != "em":
        raise ValueError("sr_em_predict_substep requires scheme 'em'")
    x_next, pre = predict_pre_array(state, model, delta, cfg)
    return FilterState(state.t + delta, x_next, triangularize_lower(pre), "cholesky")


def sr_it_predict_substep(state: FilterState, model: ModelSpec, delta: float, cfg: DfekfConfig) -> FilterState:
    """IT-1.5 substep on a Cholesky factor via the three-block pre-array."""
    if cfg.scheme != "it":
        raise ValueError("sr_it_predict_substep requires scheme 'it'")
    x_next, pre = predict_pre_array(state, model, delta, cfg)
    return FilterState(state.t + delta, x_next, triangularize_lower(pre), "cholesky")


def _svd_gstar(model: ModelSpec) -> np.ndarray:
    return model.g @ svd_sqrt(model.q_cov).sqrt()


def svd_predict_substep(
    state: FilterState,
    model: ModelSpec,
    delta: float,
    cfg: DfekfConfig,
    scheme: str | None = None,
    gstar: np.ndarray | None = None,
) -> FilterState:
    """Substep on an SVD factor; the new ``(W, s)`` comes from the SVD of the pre-array.

    ``gstar`` defaults to ``G Q^{1/2}`` with the SVD square root of ``Q``.
    """
    if scheme is not None and scheme != cfg.scheme:
        cfg = DfekfConfig(cfg.alpha, cfg.l_subdivisions, scheme, cfg.sample_sqrt)
    gstar = _svd_gstar(model) if gstar is None else gstar
    x_next, pre = predict_pre_array(state, model, delta, cfg, gstar=gstar)
    return FilterState(state.t + delta, x_next, svd_factor_of_array(pre), "svd")


def _innovation(z, z_hat):
    return np.asarray(z, dtype=float) - z_hat


def _apply_gain(x_hat, gain, residual):
    return x_hat + np.einsum("...ij,...j->...i", gain, residual)


def sr_mu_two_qr(state: FilterState, z: np.ndarray, model: ModelSpec, cfg: DfekfConfig, k: int = 1) -> FilterState:
    """Update with separate arrays for ``R_e^{1/2}`` and ``P^{1/2}``.

    ``K = P_xz R_e^{-T/2} R_e^{-1/2}`` is obtained by two triangular solves.
    """
    z_hat, xbar, zbar = measurement_spread(model, k, state.x_hat, state.cov, cfg.alpha)
    r_sqrt = _batch_like(model.r_sqrt, zbar)
    re_sqrt = triangularize_lower(np.concatenate([zbar, r_sqrt], axis=-1))
    pxz = xbar @ _mT(zbar)
    # R_e^{1/2} Y = Pxz^T, then R_e^{T/2} K^T = Y
    y = solve_triangular_batched(re_sqrt, _mT(pxz), lower=True)
    gain = _mT(solve_triangular_batched(_mT(re_sqrt), y, lower=False))
    x_new = _apply_gain(state.x_hat, gain, _innovation(z, z_hat))
    p_sqrt = triangularize_lower(np.concatenate([xbar - gain @ zbar, gain @ r_sqrt], axis=-1))
    return FilterState(state.t, x_new, p_sqrt, "cholesky")


def sr_mu_one_qr(state: FilterState, z: np.ndarray, model: ModelSpec, cfg: DfekfConfig, k: int = 1) -> FilterState:
    """Update with one combined array; ``K = P̄_xz R_e^{-1/2}`` (one triangular solve)."""
    z_hat, xbar, zbar = measurement_spread(model, k, state.x_hat, state.cov, cfg.alpha)
    re_sqrt, pxz_bar, p_sqrt = block_triangularize(zbar, xbar, model.r_sqrt)
    # K R_e^{1/2} = P̄xz  <=>  R_e^{T/2} K^T = P̄xz^T
    gain = _mT(solve_triangular_batched(_mT(re_sqrt), _mT(pxz_bar), lower=False))
    x_new = _apply_gain(state.x_hat, gain, _innovation(z, z_hat))
    return FilterState(state.t, x_new, p_sqrt, "cholesky")


def svd_mu(state: FilterState, z: np.ndarray, model: ModelSpec, cfg: DfekfConfig, k: int = 1) -> FilterState:
    """SVD-factor update, ``K = P_xz W_Re Sigma_Re^{-1} W_Re^T``.

    A square-root singular value ``s`` of ``R_e`` (``R_e = W diag(s^2) W^T``)
    below ``1e-14`` times the largest one is a breakdown: the reciprocal is
    not regularized.
    """
    z_hat, xbar, zbar = measurement_spread(model, k, state.x_hat, state.cov.sqrt(), cfg.alpha)
    r_fac = svd_sqrt(model.r_cov).sqrt()
    r_sqrt = _batch_like(r_fac, zbar)
    re = svd_factor_of_array(np.concatenate([zbar, r_sqrt], axis=-1))
    if np.any(re.s <= SVD_FLOOR * re.s[..., :1]):
        raise SingularResidualCovariance("residual covariance singular value below 1e-14 * largest")
    sigma = re.s**2
    pxz = xbar @ _mT(zbar)
    gain = (pxz @ re.w / sigma[..., None, :]) @ _mT(re.w)
    x_new = _apply_gain(state.x_hat, gain, _innovation(z, z_hat))
    post = svd_factor_of_array(np.concatenate([xbar - gain @ zbar, gain @ r_sqrt], axis=-1))
    return FilterState(state.t, x_new, post, "svd")


def variant_scheme(variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"unknown square-root variant {variant!r}; expected one of {VARIANTS}")
    return "em" if variant[0] == "1" else "it"


def initial_factor_state(model: ModelSpec, variant: str, batch: tuple = ()) -> FilterState:
    x0 = np.broadcast_to(model.x0_mean, batch + (model.n,)).copy()
    if variant.endswith("c"):
        fac = svd_sqrt(model.p0)
        cov = SvdFactor(
            np.broadcast_to(fac.w, batch + fac.w.shape).copy(),
            np.broadcast_to(fac.s, batch + fac.s.shape).copy(),
        )
        return FilterState(0.0, x0, cov, "svd")
    p0_sqrt = lower_cholesky(model.p0)
    return FilterState(0.0, x0, np.broadcast_to(p0_sqrt, batch + p0_sqrt.shape).copy(), "cholesky")


def _substep_for(variant: str):
    if variant.endswith("c"):
        return svd_predict_substep
    return sr_em_predict_substep if variant[0] == "1" else sr_it_predict_substep


def _update_for(variant: str):
    return {"a": sr_mu_two_qr, "b": sr_mu_one_qr, "c": svd_mu}[variant[-1]]


def predict_interval_sqrt(
    state: FilterState, model: ModelSpec, big_delta: float, cfg: DfekfConfig, variant: str
) -> FilterState:
    if variant.endswith("c"):
        gstar = _svd_gstar(model)

        def substep(s, mdl, d):
            return svd_predict_substep(s, mdl, d, cfg, gstar=gstar)

    else:
        base = _substep_for(variant)

        def substep(s, mdl, d):
            return base(s, mdl, d, cfg)

    return integrate_interval(state, model, big_delta, substep, cfg.l_subdivisions)


def run_squareroot(
    model: ModelSpec,
    cfg: DfekfConfig,
    variant: str,
    times: np.ndarray,
    z: np.ndarray,
    store_covariance: bool = False,
) -> RunResult:
    """Run a square-root variant; ``cfg.scheme`` must match the variant's scheme."""
    scheme = variant_scheme(variant)
    if cfg.scheme != scheme:
        raise ValueError(f"variant {variant} uses scheme {scheme!r}, config has {cfg.scheme!r}")
    z = np.asarray(z, dtype=float)
    update_fn = _update_for(variant)

    def predict(state, t_next):
        return predict_interval_sqrt(state, model, t_next - state.t, cfg, variant)

    def update(state, z_k, k):
        return update_fn(state, z_k, model, cfg, k)

    init = initial_factor_state(model, variant, z.shape[:-2])
    return run_loop(init, predict, update, times, z, store_covariance)
