import numpy as np
import pytest

from magnav_online import crlb
from magnav_online import ekf_core as ekf
from magnav_online.errors import ConfigurationError, NumericalDegeneracyError
from oracles import batch_fim, kalman_covariances


def random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T + 0.5 * np.eye(n))


def test_predict_examples():
    J = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(crlb.fim_predict(J, np.eye(2), np.zeros((2, 2))), J, rtol=1e-14)
    assert crlb.fim_predict([[1.0]], [[1.0]], [[1.0]])[0, 0] == pytest.approx(0.5, rel=1e-15)
    assert crlb.fim_predict([[1.0]], [[2.0]], [[0.0]])[0, 0] == pytest.approx(0.25, rel=1e-15)


def test_update_examples(rng):
    J = random_spd(rng, 3)
    np.testing.assert_array_equal(crlb.fim_update(J, np.zeros(3), [[1.0]]), J)
    assert crlb.fim_update([[1.0]], [1.0], [[0.25]])[0, 0] == 5.0
    H = rng.normal(size=3)
    assert np.linalg.eigvalsh(crlb.fim_update(J, H, [[0.3]]) - J).min() >= -1e-12


def test_predict_output_is_symmetric_psd(rng):
    out = crlb.fim_predict(random_spd(rng, 4), rng.normal(size=(4, 4)), random_spd(rng, 4, 0.1))
    assert np.array_equal(out, out.T) and np.linalg.eigvalsh(out).min() > 0


def test_shape_errors(rng):
    with pytest.raises(ConfigurationError):
        crlb.fim_predict(np.eye(2), np.eye(3), np.eye(2))
    with pytest.raises(ConfigurationError):
        crlb.fim_update(np.eye(2), [1.0, 2.0, 3.0], [[1.0]])
    with pytest.raises(ConfigurationError):
        crlb.crlb_trace(np.zeros((3, 2)), np.eye(3), np.eye(3), 1.0, np.eye(3))


def test_no_information_keeps_prior_bound():
    J0 = np.diag([4.0, 1.0, 0.5])
    tr = crlb.crlb_trace(np.zeros((20, 3)), np.eye(3), np.zeros((3, 3)), [[1.0]], J0)
    np.testing.assert_allclose(tr.bound, np.sqrt(0.25 + 1.0), rtol=1e-14)
    assert not tr.jittered.any()


def test_recursion_matches_batch_assembly(rng):
    n, T = 3, 10
    F = np.eye(n) + 0.1 * rng.normal(size=(n, n))
    Q = random_spd(rng, n, 0.05)
    R = 0.3
    J0 = np.linalg.inv(random_spd(rng, n))
    H = rng.normal(size=(T + 1, n))
    tr = crlb.crlb_trace(H, F, Q, [[R]], J0, n_position=2)
    batch = batch_fim(J0, F, Q, R, H, T)
    assert np.max(np.abs(tr.final_information - batch)) <= 1e-9 * np.max(np.abs(batch))
    for k in (1, 4, 7):
        cov = np.linalg.inv(batch_fim(J0, F, Q, R, H, k))
        assert tr.bound[k] == pytest.approx(np.sqrt(np.trace(cov[:2, :2])), rel=1e-9)


def test_linear_filter_covariance_equals_inverse_information(rng):
    n, T = 4, 60
    F = np.eye(n) + 0.05 * rng.normal(size=(n, n))
    Q = random_spd(rng, n, 0.01)
    R = 0.2
    P0 = random_spd(rng, n)
    H = rng.normal(size=(T, n))
    ref = kalman_covariances(P0, F, Q, R, H)
    state = ekf.GaussianState(np.zeros(n), P0)
    noise = ekf.NoiseConfig(Q, R)
    J = np.linalg.inv(P0)
    for k in range(1, T):
        state = ekf.predict_linear(state, F, None, None, noise)
        state, _ = ekf.update_scalar(state, 0.0, 0.0, H[k], noise)
        J = crlb.fim_update(crlb.fim_predict(J, F, Q), H[k], [[R]])
        inv = np.linalg.inv(J)
        scale = np.max(np.abs(inv))
        assert np.max(np.abs(state.covariance - inv)) <= 1e-9 * scale
        assert np.max(np.abs(ref[k] - inv)) <= 1e-9 * scale


def test_denser_information_tightens_bound(rng):
    n, T = 3, 50
    H = rng.normal(size=(T, n))
    args = (np.eye(n), 0.01 * np.eye(n), [[0.5]], np.eye(n))
    weak = crlb.crlb_trace(H, *args).bound
    strong = crlb.crlb_trace(2.0 * H, *args).bound
    assert np.all(strong[1:] < weak[1:]) and strong[0] == weak[0]


def test_parameters_inflate_position_bound(rng):
    T, n_p = 200, 3
    H_pos = rng.normal(size=(T, 2))
    H_par = rng.normal(size=(T, n_p))
    Q_pos, q_par, R = 0.5, 1e-3, 0.1
    plain = crlb.crlb_trace(H_pos, np.eye(2), Q_pos * np.eye(2), [[R]], np.eye(2))
    aug = crlb.crlb_trace(np.hstack([H_pos, H_par]), np.eye(2 + n_p),
                          np.diag([Q_pos] * 2 + [q_par] * n_p), [[R]], np.diag([1.0, 1.0] + [1e-2] * n_p))
    assert np.all(aug.bound >= plain.bound * (1 - 1e-12))
    assert np.mean(aug.bound[1:] / plain.bound[1:]) > 1.01


def test_singular_prior_is_jittered_and_flagged():
    J0 = np.diag([1.0, 1.0, 0.0])
    H = np.tile([1.0, 0.0, 0.0], (5, 1))
    tr = crlb.crlb_trace(H, np.eye(3), np.zeros((3, 3)), [[1.0]], J0)
    assert tr.jittered[0] and np.all(np.isfinite(tr.bound))
    with pytest.raises(NumericalDegeneracyError):
        crlb.crlb_trace(H, np.eye(3), np.zeros((3, 3)), [[1.0]], J0, regularize=False)


def test_non_finite_rows_add_no_information():
    J0 = np.eye(2)
    H = np.array([[np.nan, np.nan], [1.0, 0.0], [np.nan, np.nan]])
    tr = crlb.crlb_trace(H, np.eye(2), np.zeros((2, 2)), [[1.0]], J0)
    assert tr.bound[2] == tr.bound[1] < tr.bound[0]
