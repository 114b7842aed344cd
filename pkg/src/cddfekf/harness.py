"""Monte Carlo benchmark: shared data generation, filter execution, ARMSE and timing.

The coordinated-turn dynamics do not depend on the ill-conditioning
parameter, so the true trajectories are simulated once per configuration
and reused across the whole sweep. Measurements are ``z = H(gamma) x +
R(gamma)^{1/2} e`` with the same standard normal ``e`` for every ``gamma``.
All Monte Carlo runs of one scenario are filtered together as a batch; a
scenario fails as soon as any of its runs fails.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NonFiniteInput
from .examples import TURN_RATE_UNITS, build_coordinated_turn
from .model import ModelSpec
from .sde import DRIFT_MAPS, rng_stream, simulate_truth
from .variants import FILTER_IDS, get_variant, run_filter

log = logging.getLogger(__name__)

DEFAULT_GAMMAS = tuple(10.0**-i for i in range(1, 15))
TRUTH_INITIAL = ("sampled", "mean")


@dataclass(frozen=True)
class ExperimentConfig:
    gamma_list: tuple = DEFAULT_GAMMAS
    mc_runs: int = 100
    horizon: float = 150.0
    sample_period: float = 1.0
    l_em: int = 512
    l_it: int = 64
    alpha: float = 1000.0
    truth_step: float = 0.0005
    master_seed: int = 20240101
    filters: tuple = FILTER_IDS
    turn_rate_units: str = "deg"
    truth_scheme: str = "em"
    truth_initial: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "gamma_list", tuple(float(g) for g in self.gamma_list))
        object.__setattr__(self, "filters", tuple(self.filters))
        self.validate()

    def validate(self) -> None:
        if not self.gamma_list:
            raise ConfigError("gamma_list must not be empty", "gamma_list")
        if any(not g > 0 for g in self.gamma_list):
            raise ConfigError("gamma values must be positive", "gamma_list")
        if any(a <= b for a, b in zip(self.gamma_list, self.gamma_list[1:])):
            raise ConfigError("gamma_list must be strictly decreasing", "gamma_list")
        for key in ("mc_runs", "l_em", "l_it"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{key} must be a positive integer", key)
        for key in ("horizon", "sample_period", "alpha", "truth_step"):
            if not float(getattr(self, key)) > 0:
                raise ConfigError(f"{key} must be positive", key)
        if not _divides(self.sample_period, self.horizon):
            raise ConfigError("sample_period must divide horizon", "sample_period")
        if not _divides(self.truth_step, self.sample_period):
            raise ConfigError("truth_step must divide sample_period", "truth_step")
        if not self.filters:
            raise ConfigError("filters must not be empty", "filters")
        for fid in self.filters:
            if fid not in FILTER_IDS:
                raise ConfigError(f"unknown filter {fid!r}", "filters")
        if len(set(self.filters)) != len(self.filters):
            raise ConfigError("filters must not repeat", "filters")
        if self.turn_rate_units not in TURN_RATE_UNITS:
            raise ConfigError(f"turn_rate_units must be one of {TURN_RATE_UNITS}", "turn_rate_units")
        if self.truth_scheme not in DRIFT_MAPS:
            raise ConfigError(f"truth_scheme must be one of {tuple(DRIFT_MAPS)}", "truth_scheme")
        if self.truth_initial not in TRUTH_INITIAL:
            raise ConfigError(f"truth_initial must be one of {TRUTH_INITIAL}", "truth_initial")

    def l_for(self, filter_id: str) -> int:
        return self.l_em if get_variant(filter_id).scheme == "em" else self.l_it

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def _divides(step: float, total: float) -> bool:
    ratio = total / step
    return round(ratio) >= 1 and abs(ratio - round(ratio)) < 1e-9 * max(1.0, ratio)


@dataclass(frozen=True)
class SweepRow:
    gamma: float
    filter: str
    status: str  # "Completed" or "Failed"
    armse: Optional[float]
    cpu_seconds: float
    failed_step: Optional[int] = None
    cause: Optional[str] = None

    @property
    def completed(self) -> bool:
        return self.status == "Completed"


@dataclass
class SweepTable:
    config: ExperimentConfig
    rows: list = field(default_factory=list)

    @property
    def gammas(self) -> list:
        return sorted({r.gamma for r in self.rows}, reverse=True)

    @property
    def filters(self) -> list:
        seen = []
        for r in self.rows:
            if r.filter not in seen:
                seen.append(r.filter)
        return seen

    def row(self, gamma: float, filter_id: str) -> SweepRow:
        for r in self.rows:
            if r.filter == filter_id and np.isclose(r.gamma, gamma, rtol=1e-12, atol=0.0):
                return r
        raise KeyError((gamma, filter_id))

    def last_completed_gamma(self, filter_id: str) -> Optional[float]:
        """Smallest gamma of the leading run of completed rows (``None`` if the first fails)."""
        last = None
        for g in self.gammas:
            if not self.row(g, filter_id).completed:
                break
            last = g
        return last


def armse(truths: np.ndarray, estimates: np.ndarray) -> float:
    """Accumulated RMSE ``sqrt(sum over runs, steps, components of e^2 / (M K))``.

    Inputs have shape ``(M, K, n)`` (a 2-D input is one run).
    """
    truths = np.asarray(truths, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if truths.shape != estimates.shape:
        raise ValueError(f"shape mismatch {truths.shape} vs {estimates.shape}")
    if not (np.all(np.isfinite(truths)) and np.all(np.isfinite(estimates))):
        raise NonFiniteInput("armse inputs must be finite")
    if truths.ndim == 2:
        truths, estimates = truths[None], estimates[None]
    m, k = truths.shape[:2]
    if m * k == 0:
        raise ValueError("armse needs at least one run and one step")
    return float(np.sqrt(np.sum((truths - estimates) ** 2) / (m * k)))


@dataclass(frozen=True)
class TruthData:
    """True states at the sampling instants and the standardized measurement noise.

    ``states[r, k]`` is ``x(t_k)`` of run ``r``; ``noise[r, k]`` is the
    standard normal vector scaled by ``R^{1/2}`` to form ``z``.
    """

    times: np.ndarray
    states: np.ndarray
    noise: np.ndarray

    def measurements(self, model: ModelSpec) -> np.ndarray:
        k_idx = range(1, len(self.times) + 1)
        h = np.stack([model.observation(k, self.states[:, k - 1]) for k in k_idx], axis=1)
        return h + self.noise @ model.r_sqrt.T


def make_model(cfg: ExperimentConfig, gamma: float) -> ModelSpec:
    return build_coordinated_turn(gamma, cfg.turn_rate_units)


def generate_truth(cfg: ExperimentConfig, runs: Optional[Sequence[int]] = None) -> TruthData:
    """Simulate the true trajectories of the given run indices (all runs by default).

    Run ``r`` draws from the streams ``(master_seed, r, "truth")`` and
    ``(master_seed, r, "measurement")``, so results do not depend on which
    other runs are simulated alongside it.
    """
    runs = list(range(cfg.mc_runs)) if runs is None else list(runs)
    model = make_model(cfg, cfg.gamma_list[0])
    record_every = int(round(cfg.sample_period / cfg.truth_step))
    x0 = model.x0_mean if cfg.truth_initial == "mean" else None
    times, states = simulate_truth(
        model,
        cfg.truth_step,
        cfg.horizon,
        [rng_stream(cfg.master_seed, r, "truth") for r in runs],
        record_every=record_every,
        scheme=cfg.truth_scheme,
        x0=x0,
    )
    noise = np.stack(
        [rng_stream(cfg.master_seed, r, "measurement").standard_normal((len(times) - 1, model.m)) for r in runs]
    )
    return TruthData(times[1:], states[:, 1:], noise)


def data_digest(states: np.ndarray, z: np.ndarray) -> str:
    """SHA-256 of the byte representation of one run's truth and measurements."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(states, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(z, dtype=np.float64).tobytes())
    return h.hexdigest()


def run_one(
    filter_id: str, model: ModelSpec, data: TruthData, z: np.ndarray, cfg: ExperimentConfig, gamma: float
) -> SweepRow:
    n_runs = data.states.shape[0]
    start = time.perf_counter()
    res = run_filter(filter_id, model, data.times, z, cfg.l_for(filter_id), cfg.alpha)
    elapsed = time.perf_counter() - start
    if not res.completed:
        return SweepRow(gamma, filter_id, "Failed", None, elapsed / n_runs, res.failed_step, res.cause)
    return SweepRow(gamma, filter_id, "Completed", armse(data.states, res.estimates), elapsed / n_runs)


def run_scenario(
    gamma: float,
    cfg: ExperimentConfig,
    data: Optional[TruthData] = None,
    model_builder: Callable[[ExperimentConfig, float], ModelSpec] = make_model,
    on_row: Optional[Callable[[SweepRow], None]] = None,
) -> list:
    """Run every configured filter on identical data for one ``gamma``."""
    if not gamma > 0:
        raise ConfigError("gamma must be positive", "gamma")
    data = generate_truth(cfg) if data is None else data
    model = model_builder(cfg, gamma)
    z = data.measurements(model)
    rows = []
    for fid in cfg.filters:
        row = run_one(fid, model, data, z, cfg, gamma)
        log.info("gamma=%g %s %s armse=%s", gamma, fid, row.status, row.armse)
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows


def sweep(
    cfg: ExperimentConfig,
    data: Optional[TruthData] = None,
    on_row: Optional[Callable[[SweepRow], None]] = None,
    skip_after_failure: bool = False,
) -> SweepTable:
    """Rows for every ``(gamma, filter)`` pair.

    With ``skip_after_failure`` a filter that failed at some ``gamma`` is
    not executed for smaller values and is reported as failed there (cause
    "skipped"); this assumes monotone breakdown and saves most of the cost
    of the ill-conditioned end of the sweep.
    """
    data = generate_truth(cfg) if data is None else data
    table = SweepTable(cfg)
    failed: set = set()
    for gamma in cfg.gamma_list:
        active = [f for f in cfg.filters if not (skip_after_failure and f in failed)]
        rows = {}
        if active:
            sub = cfg.with_overrides(filters=tuple(active))
            for row in run_scenario(gamma, sub, data, on_row=on_row):
                rows[row.filter] = row
        for fid in cfg.filters:
            row = rows.get(fid)
            if row is None:
                row = SweepRow(gamma, fid, "Failed", None, float("nan"), None, "skipped after earlier failure")
                if on_row is not None:
                    on_row(row)
            if not row.completed:
                failed.add(fid)
            table.rows.append(row)
    return table
