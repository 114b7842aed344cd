"""SDE discretization maps, path simulation and measurement generation."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import NonFiniteOutput
from .model import ModelSpec, l0_apply, l_matrix

RngLike = Union[np.random.Generator, Sequence[np.random.Generator]]


def rng_stream(seed: int, run: int, purpose: str) -> np.random.Generator:
    """Counter-based generator addressed by ``(seed, run index, purpose)``.

    Streams for different addresses are statistically independent, so every
    filter can be fed identical data for a given run regardless of the order
    in which runs are executed.
    """
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, run, tag])))


@dataclass(frozen=True)
class Mesh:
    """Equidistant mesh of ``l_subdivisions`` steps on ``[t_start, t_end]``."""

    t_start: float
    t_end: float
    l_subdivisions: int

    def __post_init__(self):
        if self.l_subdivisions < 1:
            raise ValueError("l_subdivisions must be positive")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")

    @property
    def delta(self) -> float:
        return (self.t_end - self.t_start) / self.l_subdivisions

    def nodes(self) -> np.ndarray:
        return self.t_start + self.delta * np.arange(self.l_subdivisions + 1)


def _finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteOutput(f"{what} produced non-finite values")
    return x


def em_drift(model: ModelSpec, t: float, x: np.ndarray, delta: float) -> np.ndarray:
    """Euler-Maruyama drift map ``x + delta * f(t, x)`` (state on the last axis)."""
    x = np.asarray(x, dtype=float)
    return _finite(x + delta * model.drift(t, x), "em_drift")


def it_drift(model: ModelSpec, t: float, x: np.ndarray, delta: float) -> np.ndarray:
    """Ito-Taylor 1.5 drift map ``x + delta f + delta^2/2 L_0 f``."""
    x = np.asarray(x, dtype=float)
    out = x + delta * model.drift(t, x) + 0.5 * delta**2 * l0_apply(model, t, x)
    return _finite(out, "it_drift")


def columnwise(fn, model: ModelSpec, t: float, columns: np.ndarray, delta: float) -> np.ndarray:
    """Apply a drift map to every column of ``columns`` (shape ``(..., n, k)``)."""
    return np.swapaxes(fn(model, t, np.swapaxes(columns, -1, -2), delta), -1, -2)


DRIFT_MAPS = {"em": em_drift, "it": it_drift}


class ItNoisePair(NamedTuple):
    w1: np.ndarray
    w2: np.ndarray


def sample_it_noise(delta: float, dim: int, rng: np.random.Generator, size=()) -> ItNoisePair:
    """Draw the correlated pair ``(w1, w2)`` of the order-1.5 Ito-Taylor scheme.

    ``w1 = sqrt(delta) v1`` and ``w2 = delta^{3/2}/2 (v1 + v2/sqrt(3))`` with
    independent standard normal ``v1, v2``, giving ``E[w1 w1^T] = delta I``,
    ``E[w1 w2^T] = delta^2/2 I`` and ``E[w2 w2^T] = delta^3/3 I``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    v = rng.standard_normal(shape + (2, dim))
    v1, v2 = v[..., 0, :], v[..., 1, :]
    w1 = np.sqrt(delta) * v1
    w2 = 0.5 * delta**1.5 * (v1 + v2 / np.sqrt(3.0))
    return ItNoisePair(w1, w2)


def _as_generators(rng: RngLike) -> tuple[list[np.random.Generator], bool]:
    if isinstance(rng, np.random.Generator):
        return [rng], False
    return list(rng), True


def _steps(step: float, t_end: float) -> int:
    if step <= 0:
        raise ValueError("step must be positive")
    count = int(round(t_end / step))
    if count < 1 or abs(count * step - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError(f"step {step} does not divide {t_end}")
    return count


def simulate_truth(
    model: ModelSpec,
    delta_fine: float,
    t_end: float,
    rng: RngLike,
    record_every: int = 1,
    scheme: str = "em",
    x0: np.ndarray | None = None,
    chunk: int = 4000,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate sample paths of the SDE on ``[0, t_end]``.

    ``rng`` is a generator (one path) or a sequence of generators (one path
    per generator, returned stacked along a leading axis). The initial state
    is drawn from ``N(x0_mean, p0)`` unless ``x0`` is given. ``scheme`` is
    ``"em"`` (Euler-Maruyama) or ``"it"`` (order 1.5 Ito-Taylor).

    Returns ``(times, states)`` at every ``record_every``-th fine node.
    """
    if scheme not in DRIFT_MAPS:
        raise ValueError(f"unknown scheme {scheme!r}")
    gens, batched = _as_generators(rng)
    n_steps = _steps(delta_fine, t_end)
    if n_steps % record_every:
        raise ValueError("record_every must divide the number of fine steps")
    n, q = model.n, model.q
    p0_sqrt = np.linalg.cholesky(model.p0)
    if x0 is None:
        x = np.stack([model.x0_mean + p0_sqrt @ g.standard_normal(n) for g in gens])
    else:
        x = np.broadcast_to(np.asarray(x0, dtype=float), (len(gens), n)).copy()

    n_rec = n_steps // record_every
    out = np.empty((len(gens), n_rec + 1, n))
    out[:, 0] = x
    gstar = model.gstar
    drift_map = DRIFT_MAPS[scheme]
    sqrt_d = np.sqrt(delta_fine)
    i = 0
    while i < n_steps:
        count = min(chunk, n_steps - i)
        if scheme == "em":
            noise = np.stack([g.standard_normal((count, q)) for g in gens], axis=1)
            # diffusion increments of the whole chunk in one product
            increments = (sqrt_d * noise) @ gstar.T
            for j in range(count):
                x = x + delta_fine * model.drift((i + j) * delta_fine, x) + increments[j]
                step = i + j + 1
                if step % record_every == 0:
                    out[:, step // record_every] = x
            # non-finite values propagate, so one check per chunk suffices
            _finite(x, "simulate_truth")
        else:
            v = np.stack([g.standard_normal((count, 2, q)) for g in gens], axis=1)
            for j in range(count):
                t = (i + j) * delta_fine
                v1, v2 = v[j, :, 0], v[j, :, 1]
                w1 = sqrt_d * v1
                w2 = 0.5 * delta_fine**1.5 * (v1 + v2 / np.sqrt(3.0))
                lf = l_matrix(model, t, x)
                x_next = drift_map(model, t, x, delta_fine) + w1 @ gstar.T + np.einsum("bij,bj->bi", lf, w2)
                x = _finite(x_next, "simulate_truth")
                step = i + j + 1
                if step % record_every == 0:
                    out[:, step // record_every] = x
        i += count
    times = delta_fine * record_every * np.arange(n_rec + 1)
    return times, (out if batched else out[0])


def generate_measurements(
    model: ModelSpec,
    times: np.ndarray,
    states: np.ndarray,
    sample_period: float,
    rng: RngLike,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample ``z_k = h(k, x(t_k)) + v_k`` at ``t_k = k * sample_period``.

    ``times``/``states`` are a recorded path as returned by
    :func:`simulate_truth`. Returns ``(t_k, x(t_k), z_k)`` for ``k = 1..K``.
    """
    gens, batched = _as_generators(rng)
    states = np.asarray(states, dtype=float)
    if not batched:
        states = states[None]
    step = times[1] - times[0]
    stride = int(round(sample_period / step))
    if stride < 1 or abs(stride * step - sample_period) > 1e-9 * sample_period:
        raise ValueError("sample_period must be a multiple of the recorded step")
    idx = np.arange(stride, len(times), stride)
    t_k = times[idx]
    x_k = states[:, idx]
    eps = np.stack([g.standard_normal((len(idx), model.m)) for g in gens])
    h = np.stack([model.observation(k, x_k[:, k - 1]) for k in range(1, len(idx) + 1)], axis=1)
    z = h + eps @ model.r_sqrt.T
    if not batched:
        return t_k, x_k[0], z[0]
    return t_k, x_k, z
