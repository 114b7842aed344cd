"""Quick numerical self-checks run by ``cddfekf selftest``.

* linear oracle: on a random linear SDE every filter must reproduce the
  Kalman filter of the identically discretized model;
* array identities: post-arrays of the factorization kernels must have the
  Gram matrix of their pre-arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import block_triangularize, svd_factor_of_array, triangularize_lower
from .model import ModelSpec
from .variants import FILTER_IDS, run_filter


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_linear_model(rng: np.random.Generator, n: int = 4, m: int = 2, q: int = 3):
    """Random stable linear SDE; returns ``(model, A, b, H)``."""
    a = rng.standard_normal((n, n)) * 0.3 - 0.2 * np.eye(n)
    b = rng.standard_normal(n) * 0.1
    g = rng.standard_normal((n, q)) * 0.3
    h = rng.standard_normal((m, n))
    qm = rng.standard_normal((q, q))
    qm = qm @ qm.T + q * np.eye(q)
    rm = rng.standard_normal((m, m))
    rm = 0.1 * (rm @ rm.T + m * np.eye(m))
    pm = rng.standard_normal((n, n))
    pm = pm @ pm.T / n + np.eye(n)

    return ModelSpec(
        drift=lambda t, x: np.asarray(x) @ a.T + b,
        observation=lambda k, x: np.asarray(x) @ h.T,
        g=g,
        q_cov=qm,
        r_cov=rm,
        x0_mean=rng.standard_normal(n),
        p0=pm,
        drift_jacobian=lambda t, x: np.broadcast_to(a, np.shape(x)[:-1] + a.shape),
        drift_time_partial=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        drift_hessian_contraction=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        name="random-linear",
    ), a, b, h


def linear_kalman(model: ModelSpec, a, b, h, scheme, l_sub, times, z):
    """Kalman filter for the discretized linear model (direct transition matrices)."""
    n = model.n
    x = model.x0_mean.copy()
    p = model.p0.copy()
    gs = model.gstar
    t_prev = 0.0
    xs, ps = [], []
    for k, t in enumerate(times):
        d = (t - t_prev) / l_sub
        t_prev = t
        if scheme == "em":
            phi = np.eye(n) + d * a
            c = d * b
            qd = d * gs @ gs.T
        else:
            phi = np.eye(n) + d * a + 0.5 * d * d * a @ a
            c = d * b + 0.5 * d * d * a @ b
            lf = a @ gs
            qd = d * gs @ gs.T + 0.5 * d * d * (gs @ lf.T + lf @ gs.T) + d**3 / 3.0 * lf @ lf.T
        for _ in range(l_sub):
            x = phi @ x + c
            p = phi @ p @ phi.T + qd
        s = h @ p @ h.T + model.r_cov
        gain = np.linalg.solve(s, h @ p).T
        x = x + gain @ (z[k] - h @ x)
        p = p - gain @ s @ gain.T
        xs.append(x.copy())
        ps.append(p.copy())
    return np.array(xs), np.array(ps)


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def linear_oracle(seed: int = 0, steps: int = 10, alphas=(10.0, 1000.0), tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    model, a, b, h = random_linear_model(rng)
    times = 0.5 * np.arange(1, steps + 1)
    z = rng.standard_normal((steps, model.m))
    worst = 0.0
    worst_id = ""
    l_sub = 4
    for scheme in ("em", "it"):
        xs, ps = linear_kalman(model, a, b, h, scheme, l_sub, times, z)
        for fid in (f for f in FILTER_IDS if f.startswith(scheme)):
            for alpha in alphas:
                res = run_filter(fid, model, times, z, l_sub, alpha, store_covariance=True)
                if not res.completed:
                    return CheckResult("linear-oracle", False, f"{fid} failed: {res.cause}")
                err = max(_rel(res.estimates, xs), _rel(res.covariances, ps))
                if err > worst:
                    worst, worst_id = err, f"{fid} alpha={alpha:g}"
    return CheckResult("linear-oracle", worst <= tol, f"max relative deviation {worst:.2e} ({worst_id})")


def _gram_rel(post, pre):
    g_pre = pre @ np.swapaxes(pre, -1, -2)
    g_post = post @ np.swapaxes(post, -1, -2)
    return np.linalg.norm(g_post - g_pre, axis=(-2, -1)) / np.linalg.norm(g_pre, axis=(-2, -1))


def array_identities(seed: int = 0, trials: int = 1000, tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    n, m = 7, 2
    pre = rng.standard_normal((trials, n, n + 7))
    worst = float(np.max(_gram_rel(triangularize_lower(pre), pre)))
    fac = svd_factor_of_array(pre)
    worst = max(worst, float(np.max(_gram_rel(fac.sqrt(), pre))))
    zbar = rng.standard_normal((trials, m, n))
    xbar = rng.standard_normal((trials, n, n))
    r_sqrt = np.tril(rng.standard_normal((trials, m, m)))
    re_s, pxz_bar, p_s = block_triangularize(zbar, xbar, r_sqrt)
    top = np.concatenate([zbar, r_sqrt], axis=-1)
    bottom = np.concatenate([xbar, np.zeros((trials, n, m))], axis=-1)
    block_pre = np.concatenate([top, bottom], axis=-2)
    post = np.concatenate(
        [np.concatenate([re_s, np.zeros((trials, m, n))], axis=-1), np.concatenate([pxz_bar, p_s], axis=-1)],
        axis=-2,
    )
    worst = max(worst, float(np.max(_gram_rel(post, block_pre))))
    return CheckResult("array-identities", worst <= tol, f"max relative Gram deviation {worst:.2e}")


def run_all() -> list:
    return [linear_oracle(), array_identities()]
