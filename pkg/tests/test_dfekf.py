import numpy as np
import pytest
import scipy.linalg

from cddfekf.core import FilterState
from cddfekf.dfekf import (
    DfekfConfig,
    center_scale,
    em_predict_substep,
    initial_state,
    it_predict_substep,
    measurement_update,
    predict_interval,
    run_conventional,
    sample_matrix,
)
from cddfekf.errors import NotPositiveDefinite, SingularResidualCovariance
from cddfekf.examples import build_coordinated_turn
from cddfekf.model import ModelSpec

RNG = np.random.default_rng(42)
A = np.array([[-0.3, 0.8, 0.0], [-0.8, -0.1, 0.2], [0.1, 0.0, -0.5]])
G = np.array([[0.3, 0.0], [0.1, 0.2], [0.0, 0.4]])
QC = np.array([[1.5, 0.3], [0.3, 0.8]])


def linear_model(h=None, r=None, a=A, g=G):
    h = np.array([[1.0, 0.0, 1.0]]) if h is None else h
    r = np.eye(h.shape[0]) * 0.5 if r is None else r
    return ModelSpec(
        drift=lambda t, x: np.asarray(x) @ a.T,
        observation=lambda k, x: np.asarray(x) @ h.T,
        g=g,
        q_cov=QC,
        r_cov=r,
        x0_mean=np.array([1.0, 0.0, -1.0]),
        p0=np.diag([1.0, 2.0, 0.5]),
        drift_jacobian=lambda t, x: np.broadcast_to(a, np.shape(x)[:-1] + a.shape),
        drift_time_partial=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        drift_hessian_contraction=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def spd(n, rng=RNG):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def it_linear_cov(p, d, a=A, model=None):
    model = model or linear_model()
    gs = model.gstar
    phi = np.eye(3) + d * a + 0.5 * d * d * a @ a
    lf = a @ gs
    return phi @ p @ phi.T + d * gs @ gs.T + 0.5 * d * d * (gs @ lf.T + lf @ gs.T) + d**3 / 3 * lf @ lf.T


def test_config_validation():
    with pytest.raises(ValueError):
        DfekfConfig(alpha=0.0)
    with pytest.raises(ValueError):
        DfekfConfig(l_subdivisions=0)
    with pytest.raises(ValueError):
        DfekfConfig(scheme="rk")
    with pytest.raises(ValueError):
        DfekfConfig(sample_sqrt="qr")


def test_sample_matrix_basics():
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(sample_matrix(x, np.zeros((3, 3)), 1000.0), np.tile(x[:, None], 3))
    np.testing.assert_allclose(sample_matrix(x, np.eye(3), np.sqrt(3.0)), x[:, None] + np.eye(3))


def test_center_scale_round_trip_and_homogeneity():
    x = RNG.standard_normal(4)
    s = RNG.standard_normal((4, 4))
    for alpha in (1.0, 10.0, 1e3):
        np.testing.assert_allclose(center_scale(sample_matrix(x, s, alpha), x, alpha), s, rtol=1e-9, atol=1e-9)
    m = RNG.standard_normal((4, 6))
    np.testing.assert_allclose(center_scale(m, x, 2.0), 2.0 * center_scale(m, x, 1.0))
    np.testing.assert_array_equal(center_scale(np.tile(x[:, None], 5), x, 7.0), 0.0)


@pytest.mark.parametrize("alpha", [1.0, 10.0, 1e3])
@pytest.mark.parametrize("sqrt", ["cholesky", "svd"])
def test_em_substep_linear_oracle(alpha, sqrt):
    m = linear_model()
    p = spd(3)
    x = RNG.standard_normal(3)
    d = 0.05
    out = em_predict_substep(FilterState(0.0, x, p), m, d, DfekfConfig(alpha, 1, "em", sqrt))
    phi = np.eye(3) + d * A
    np.testing.assert_allclose(out.x_hat, phi @ x, rtol=1e-12)
    np.testing.assert_allclose(out.cov, phi @ p @ phi.T + d * m.process_cov, rtol=1e-9)
    assert out.t == pytest.approx(d)


@pytest.mark.parametrize("alpha", [10.0, 1e3])
def test_it_substep_linear_oracle(alpha):
    m = linear_model()
    p = spd(3)
    x = RNG.standard_normal(3)
    d = 0.1
    out = it_predict_substep(FilterState(0.0, x, p), m, d, DfekfConfig(alpha, 1, "it"))
    phi = np.eye(3) + d * A + 0.5 * d * d * A @ A
    np.testing.assert_allclose(out.x_hat, phi @ x, rtol=1e-10)
    np.testing.assert_allclose(out.cov, it_linear_cov(p, d), rtol=1e-9)


def test_static_system_unchanged():
    m = linear_model(a=np.zeros((3, 3)), g=np.zeros((3, 2)))
    p = spd(3)
    x = RNG.standard_normal(3)
    for sub in (em_predict_substep, it_predict_substep):
        out = sub(FilterState(0.0, x, p), m, 0.1, DfekfConfig(scheme="em" if sub is em_predict_substep else "it"))
        np.testing.assert_allclose(out.x_hat, x, rtol=1e-14)
        np.testing.assert_allclose(out.cov, p, rtol=1e-9)


def test_it_constant_drift_reduces_to_em():
    c = np.array([1.0, -2.0, 0.5])
    m = ModelSpec(
        drift=lambda t, x: np.broadcast_to(c, np.shape(x)).copy(),
        observation=lambda k, x: np.asarray(x)[..., :1],
        g=G, q_cov=QC, r_cov=np.eye(1), x0_mean=np.zeros(3), p0=np.eye(3),
    )
    p = spd(3)
    state = FilterState(0.0, np.zeros(3), p)
    em = em_predict_substep(state, m, 0.1, DfekfConfig(scheme="em"))
    it = it_predict_substep(state, m, 0.1, DfekfConfig(scheme="it"))
    np.testing.assert_allclose(it.x_hat, em.x_hat, atol=1e-12)
    np.testing.assert_allclose(it.cov, em.cov, rtol=1e-9)


def test_indefinite_covariance_breaks_down():
    m = linear_model()
    with pytest.raises(NotPositiveDefinite):
        em_predict_substep(FilterState(0.0, np.zeros(3), -np.eye(3)), m, 0.1, DfekfConfig())


def test_predict_interval_composition():
    m = linear_model()
    p = spd(3)
    s0 = FilterState(0.0, RNG.standard_normal(3), p)
    cfg1 = DfekfConfig(100.0, 1, "it")
    one = predict_interval(s0, m, 0.2, cfg1)
    direct = it_predict_substep(s0, m, 0.2, cfg1)
    np.testing.assert_array_equal(one.cov, direct.cov)
    two = predict_interval(s0, m, 0.2, DfekfConfig(100.0, 2, "it"))
    chained = it_predict_substep(it_predict_substep(s0, m, 0.1, cfg1), m, 0.1, cfg1)
    np.testing.assert_allclose(two.cov, chained.cov, rtol=1e-14)
    np.testing.assert_allclose(two.x_hat, chained.x_hat, rtol=1e-14)
    assert two.t == pytest.approx(0.2)
    with pytest.raises(ValueError):
        predict_interval(s0, m, 0.0, cfg1)


def test_time_varying_drift_sees_substep_nodes():
    seen = []

    def drift(t, x):
        seen.append(t)
        return np.zeros_like(np.asarray(x, dtype=float))

    m = ModelSpec(drift, lambda k, x: x, np.eye(1), np.eye(1), np.eye(1), np.zeros(1), np.eye(1))
    predict_interval(FilterState(2.0, np.zeros(1), np.eye(1)), m, 1.0, DfekfConfig(l_subdivisions=4))
    assert sorted(set(seen)) == [2.0, 2.25, 2.5, 2.75]


def exact_linear_cov(p0, a, qc, t):
    """Van Loan: covariance of dx = Ax dt + dW, E[dW dW^T] = qc dt, after time t."""
    n = a.shape[0]
    m = np.zeros((2 * n, 2 * n))
    m[:n, :n] = -a
    m[:n, n:] = qc
    m[n:, n:] = a.T
    e = scipy.linalg.expm(m * t)
    phi = e[n:, n:].T
    qd = phi @ e[:n, n:]
    return phi @ p0 @ phi.T + qd


@pytest.mark.parametrize("scheme,ratio", [("em", 2.0), ("it", 4.0)])
def test_order_of_covariance_propagation(scheme, ratio):
    m = linear_model()
    p0 = np.diag([1.0, 2.0, 0.5])
    exact = exact_linear_cov(p0, A, m.process_cov, 1.0)
    errs = []
    for l_sub in (8, 16, 32):
        s = predict_interval(FilterState(0.0, np.zeros(3), p0), m, 1.0, DfekfConfig(1e3, l_sub, scheme))
        errs.append(np.linalg.norm(s.cov - exact))
    rates = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(abs(r / ratio - 1) < 0.2 for r in rates), rates


def test_scalar_measurement_update():
    m = ModelSpec(lambda t, x: 0 * x, lambda k, x: np.asarray(x), np.eye(1), np.eye(1), np.eye(1), np.zeros(1), np.eye(1))
    for alpha in (1.0, 1e3):
        out = measurement_update(FilterState(0.0, np.zeros(1), np.eye(1)), np.array([2.0]), m, DfekfConfig(alpha))
        np.testing.assert_allclose(out.x_hat, [1.0])
        np.testing.assert_allclose(out.cov, [[0.5]])


def test_uninformative_measurement():
    m = ModelSpec(
        lambda t, x: 0 * x, lambda k, x: np.zeros(np.shape(x)[:-1] + (1,)) + 3.0,
        np.eye(2), np.eye(2), np.eye(1), np.zeros(2), np.eye(2),
    )
    p = spd(2)
    x = np.array([0.5, -0.5])
    out = measurement_update(FilterState(0.0, x, p), np.array([10.0]), m, DfekfConfig())
    np.testing.assert_array_equal(out.x_hat, x)
    np.testing.assert_array_equal(out.cov, p)


@pytest.mark.parametrize("alpha", [1.0, 10.0, 1e3])
def test_linear_update_equals_kalman(alpha):
    h = RNG.standard_normal((2, 3))
    r = spd(2) * 0.1
    m = linear_model(h=h, r=r)
    p = spd(3)
    x = RNG.standard_normal(3)
    z = RNG.standard_normal(2)
    out = measurement_update(FilterState(0.0, x, p), z, m, DfekfConfig(alpha))
    s = h @ p @ h.T + r
    k = p @ h.T @ np.linalg.inv(s)
    np.testing.assert_allclose(out.x_hat, x + k @ (z - h @ x), rtol=1e-9)
    np.testing.assert_allclose(out.cov, p - k @ s @ k.T, rtol=1e-9, atol=1e-12)


def test_singular_residual_covariance():
    h = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    m = linear_model(h=h, r=np.zeros((2, 2)) + 1e-300 * np.eye(2))
    with pytest.raises(SingularResidualCovariance):
        measurement_update(FilterState(0.0, np.zeros(3), np.eye(3)), np.zeros(2), m, DfekfConfig())


def test_run_empty_measurements():
    res = run_conventional(linear_model(), DfekfConfig(), np.zeros(0), np.zeros((0, 1)))
    assert res.completed and res.estimates.shape == (0, 3)


def test_initial_state_batch():
    s = initial_state(linear_model(), (4,))
    assert s.x_hat.shape == (4, 3) and s.cov.shape == (4, 3, 3)


def test_run_records_failure_step():
    m = linear_model()
    z = np.zeros((5, 1))
    z[2] = np.nan  # non-finite measurement poisons the estimate at step 3
    res = run_conventional(m, DfekfConfig(), np.arange(1.0, 6.0), z)
    assert res.status == "failed" and res.failed_step == 3
    assert res.estimates.shape == (2, 3)
    assert "NonFiniteOutput" in res.cause


@pytest.mark.parametrize("sqrt", ["cholesky", "svd"])
def test_coordinated_turn_covariance_consistency(sqrt):
    m = build_coordinated_turn(0.1, "deg")
    rng = np.random.default_rng(0)
    times = np.arange(1.0, 11.0)
    z = m.x0_mean @ np.ones((7, 2)) + rng.standard_normal((10, 2))
    res = run_conventional(m, DfekfConfig(1e3, 64, "it", sqrt), times, z, store_covariance=True)
    assert res.completed
    for p in res.covariances:
        sym = 0.5 * (p + p.T)
        assert np.linalg.eigvalsh(sym).min() >= -1e-6 * np.linalg.norm(p)
        assert np.linalg.norm(p - p.T) <= 1e-8 * np.linalg.norm(p)


def test_coordinated_turn_substep_psd():
    m = build_coordinated_turn(0.1)
    s = em_predict_substep(FilterState(0.0, m.x0_mean, m.p0), m, 1 / 512, DfekfConfig())
    np.testing.assert_allclose(s.cov, s.cov.T, rtol=1e-12, atol=1e-15)
    assert np.linalg.eigvalsh(s.cov).min() > 0
