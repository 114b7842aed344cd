"""Acceptance criteria 1-8.

Each test prints one ``criterion N: PASS|FAIL ...`` line. Criteria 4, 5
and 8 share one full gamma sweep (M = 100 by default, about an hour on one
core); set ``CDDFEKF_ACCEPT_MC`` to change M for a quicker local look.
Criterion 4 uses the 30% band at M = 100 and the 40% band for 25 <= M < 100.
"""

import math
import os
import time

import numpy as np
import pytest

from cddfekf.dfekf import DfekfConfig
from cddfekf.harness import ExperimentConfig, generate_truth, make_model, sweep
from cddfekf.linalg import lower_cholesky
from cddfekf.model import l_matrix
from cddfekf.sde import sample_it_noise
from cddfekf.selftest import array_identities, linear_oracle
from cddfekf.sqrt_filters import predict_pre_array
from cddfekf.core import FilterState
from cddfekf.variants import FILTER_IDS, get_variant, run_filter

ACCEPT_MC = int(os.environ.get("CDDFEKF_ACCEPT_MC", "100"))

# first gamma at which each filter family may fail (None: must never fail)
BREAKDOWN_BANDS = {
    "ekf": (1e-6, 1e-7, 1e-8),
    "ckf": (1e-1, 1e-2),
    "conv-chol": (1e-1, 1e-2),
    "conv-svd": (1e-4, 1e-5, 1e-6),
    "a": (1e-9, 1e-10, 1e-11),
    "b": (None,),
    "c": (1e-9, 1e-10, 1e-11),
}


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def family(filter_id):
    v = get_variant(filter_id)
    if v.family in ("ekf", "ckf"):
        return v.family
    if v.family == "conv":
        return "conv-chol" if v.detail == "cholesky" else "conv-svd"
    return v.detail[-1]


@pytest.fixture(scope="module")
def full_sweep():
    cfg = ExperimentConfig(mc_runs=ACCEPT_MC)
    start = time.perf_counter()
    table = sweep(cfg, skip_after_failure=True)
    return table, time.perf_counter() - start


def test_criterion_1_linear_oracle(capsys):
    start = time.perf_counter()
    result = linear_oracle(seed=0, steps=10, alphas=(10.0, 1e3), tol=1e-9)
    elapsed = time.perf_counter() - start
    ok = result.passed and elapsed < 10
    report(capsys, 1, ok, f"{result.detail}, {elapsed:.1f} s")
    assert result.passed, result.detail
    assert elapsed < 10


@pytest.fixture(scope="module")
def single_run():
    """Default Example 1 data for one Monte Carlo run, with its generation time."""
    start = time.perf_counter()
    cfg = ExperimentConfig(mc_runs=1)
    data = generate_truth(cfg)
    return cfg, data, time.perf_counter() - start


def test_criterion_2_squareroot_equivalence(capsys, single_run):
    # timed like cpu_seconds: filter execution only, data generation reported apart
    cfg, data, data_seconds = single_run
    start = time.perf_counter()
    model = make_model(cfg, 0.1)
    z = data.measurements(model)[0]
    pairs = {
        "em-dfekf-1a": "em-dfekf-conv-chol", "em-dfekf-1b": "em-dfekf-conv-chol", "em-dfekf-1c": "em-dfekf-conv-svd",
        "it-dfekf-2a": "it-dfekf-conv-chol", "it-dfekf-2b": "it-dfekf-conv-chol", "it-dfekf-2c": "it-dfekf-conv-svd",
    }
    runs = {}
    for fid in set(pairs) | set(pairs.values()):
        runs[fid] = run_filter(fid, model, data.times, z, cfg.l_for(fid), cfg.alpha, store_covariance=True)
    worst = {}
    for sr, conv in pairs.items():
        assert runs[sr].completed and runs[conv].completed
        a, b = runs[sr].covariances, runs[conv].covariances
        assert a.shape[0] == 150
        worst[sr] = float(np.max(np.linalg.norm(a - b, axis=(-2, -1)) / np.linalg.norm(b, axis=(-2, -1))))
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = worst[top] <= 1e-6 and elapsed < 30
    report(
        capsys, 2, ok,
        f"max relative P deviation {worst[top]:.2e} ({top}), filters {elapsed:.1f} s, data {data_seconds:.1f} s",
    )
    assert worst[top] <= 1e-6, worst
    assert elapsed < 30


def test_criterion_3_alpha_convergence(capsys, single_run):
    cfg, data, data_seconds = single_run
    start = time.perf_counter() - data_seconds
    model = make_model(cfg, 0.1)
    z = data.measurements(model)[0]
    ekf = run_filter("it-ekf", model, data.times, z, cfg.l_it)
    deviations = []
    for alpha in (10.0, 1e2, 1e3, 1e4):
        df = run_filter("it-dfekf-conv-chol", model, data.times, z, cfg.l_it, alpha)
        assert df.completed
        deviations.append(float(np.max(np.abs(df.estimates - ekf.estimates))))
    elapsed = time.perf_counter() - start
    monotone = all(a > b for a, b in zip(deviations, deviations[1:]))
    ok = monotone and elapsed < 60
    report(capsys, 3, ok, "max deviation per alpha " + ", ".join(f"{d:.3e}" for d in deviations) + f", {elapsed:.1f} s")
    assert monotone, deviations
    assert elapsed < 60


def test_criterion_4_scheme_order(capsys, full_sweep):
    table, _ = full_sweep
    band = 0.3 if ACCEPT_MC >= 100 else 0.4
    it_vals = {f: table.row(0.1, f).armse for f in ("it-dfekf-2a", "it-dfekf-2b", "it-dfekf-2c")}
    em_vals = {f: table.row(0.1, f).armse for f in ("em-dfekf-1a", "em-dfekf-1b", "em-dfekf-1c")}
    problems = []
    for f, v in it_vals.items():
        if v is None or abs(v - 10.55) > band * 10.55:
            problems.append(f"{f}={v}")
    for f, v in em_vals.items():
        if v is None or abs(v - 437.6) > band * 437.6:
            problems.append(f"{f}={v}")
    ratio = min(v for v in em_vals.values() if v) / max(v for v in it_vals.values() if v)
    if ratio <= 5:
        problems.append(f"EM/IT ratio {ratio:.1f}")
    # filter time of the whole gamma = 0.1 row over all M runs
    row_minutes = sum(table.row(0.1, f).cpu_seconds for f in FILTER_IDS) * ACCEPT_MC / 60
    if row_minutes >= 20:
        problems.append(f"gamma=0.1 row took {row_minutes:.1f} min")
    detail = (
        f"M={ACCEPT_MC}, IT " + ", ".join(f"{v:.4g}" for v in it_vals.values())
        + "; EM " + ", ".join(f"{v:.4g}" for v in em_vals.values())
        + f"; ratio {ratio:.1f}; gamma=0.1 row {row_minutes:.1f} min"
    )
    if problems:
        detail += "; out of band: " + ", ".join(problems)
    report(capsys, 4, not problems, detail)
    assert ACCEPT_MC >= 25, "criterion 4 needs M >= 25"
    assert not problems


def test_criterion_5_breakdown_pattern(capsys, full_sweep):
    table, elapsed = full_sweep
    mismatches = []
    seen = []
    for fid in FILTER_IDS:
        first_fail = next((g for g in table.gammas if not table.row(g, fid).completed), None)
        allowed = BREAKDOWN_BANDS[family(fid)]
        hit = any(
            (a is None and first_fail is None) or (a is not None and first_fail is not None and math.isclose(a, first_fail))
            for a in allowed
        )
        label = "none" if first_fail is None else f"{first_fail:.0e}"
        seen.append(f"{fid}:{label}")
        if not hit:
            mismatches.append(f"{fid} first fails at {label}")
    detail = f"M={ACCEPT_MC}, {elapsed / 60:.0f} min; first failure " + " ".join(seen)
    if mismatches:
        detail += "; outside band: " + "; ".join(mismatches)
    report(capsys, 5, not mismatches, detail)
    assert not mismatches


def test_criterion_6_array_identities(capsys):
    start = time.perf_counter()
    result = array_identities(seed=0, trials=1000, tol=1e-12)
    # IT square-root pre-array Gram against the additive-noise expression
    rng = np.random.default_rng(1)
    model = make_model(ExperimentConfig(), 0.1)
    worst_it = 0.0
    for _ in range(1000):
        x = model.x0_mean + rng.standard_normal(7) * np.array([10, 1, 10, 1, 10, 1, 0.01])
        a = rng.standard_normal((7, 7))
        p = a @ a.T + np.eye(7)
        d = rng.uniform(1e-3, 0.1)
        state = FilterState(0.0, x, lower_cholesky(p), "cholesky")
        _, pre = predict_pre_array(state, model, d, DfekfConfig(1e3, 1, "it"))
        fx = pre[:, :7]
        gs, lf = model.gstar, l_matrix(model, 0.0, x)
        expected = fx @ fx.T + d * gs @ gs.T + d**2 / 2 * (gs @ lf.T + lf @ gs.T) + d**3 / 3 * lf @ lf.T
        worst_it = max(worst_it, float(np.linalg.norm(pre @ pre.T - expected) / np.linalg.norm(expected)))
    elapsed = time.perf_counter() - start
    ok = result.passed and worst_it <= 1e-12 and elapsed < 5
    report(capsys, 6, ok, f"{result.detail}; IT pre-array Gram {worst_it:.2e}; {elapsed:.1f} s")
    assert result.passed, result.detail
    assert worst_it <= 1e-12
    assert elapsed < 5


def test_criterion_7_ito_noise_moments(capsys):
    start = time.perf_counter()
    d, dim, n = 0.01, 3, 1_000_000
    pair = sample_it_noise(d, dim, np.random.default_rng(2024), size=n)
    worst = 0.0
    for a, b, target in ((pair.w1, pair.w1, d), (pair.w1, pair.w2, d**2 / 2), (pair.w2, pair.w2, d**3 / 3)):
        prod = a[:, :, None] * b[:, None, :]
        mean = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / math.sqrt(n)
        z = np.abs(mean - target * np.eye(dim)) / se
        worst = max(worst, float(z.max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 3 and elapsed < 10
    report(capsys, 7, ok, f"largest deviation {worst:.2f} standard errors over 27 entries, {elapsed:.1f} s")
    assert worst <= 3
    assert elapsed < 10


def test_criterion_8_timing_order(capsys, full_sweep):
    table, _ = full_sweep
    cpu = {f: table.row(0.1, f).cpu_seconds for f in FILTER_IDS}
    problems = []
    for scheme, sr in (("em", ("1a", "1b", "1c")), ("it", ("2a", "2b", "2c"))):
        ekf = cpu[f"{scheme}-ekf"]
        for f in FILTER_IDS:
            if f.startswith(f"{scheme}-dfekf") and not cpu[f] > ekf:
                problems.append(f"{f} {cpu[f]:.3f} <= {scheme}-ekf {ekf:.3f}")
        svd = cpu[f"{scheme}-dfekf-{sr[2]}"]
        for c in sr[:2]:
            if not svd >= cpu[f"{scheme}-dfekf-{c}"]:
                problems.append(f"{scheme}-dfekf-{sr[2]} {svd:.3f} < {scheme}-dfekf-{c} {cpu[f'{scheme}-dfekf-{c}']:.3f}")
    detail = "cpu s/run " + ", ".join(f"{f}={cpu[f]:.3f}" for f in FILTER_IDS)
    if problems:
        detail += "; violations: " + "; ".join(problems)
    report(capsys, 8, not problems, detail)
    assert not problems
