import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_discrete_are

from drkf import _pykernels
from drkf.robust_core import (
    BISECT_TOL,
    ConvergenceError,
    DomainError,
    RobustFilterState,
    gamma,
    inflate,
    robust_covariance_step,
    robust_predict_step,
    solve_theta,
    steady_state,
)

from conftest import random_model, random_spd, scalar_model, textbook_kf


def gamma_oracle(P, theta):
    # log det(I - theta P) + tr((I - theta P)^{-1} - I), straight from dense algebra
    n = P.shape[0]
    M = np.eye(n) - theta * P
    return np.linalg.slogdet(M)[1] + np.trace(np.linalg.inv(M) - np.eye(n))


def test_gamma_zero_theta():
    assert gamma(np.diag([1.0, 5.0]), 0.0) == 0.0


def test_gamma_scalar_value():
    assert gamma(np.array([[1.0]]), 0.5) == pytest.approx(1 - math.log(2), abs=1e-14)
    assert gamma(np.array([[1.0]]), 0.5) == pytest.approx(0.306853, abs=1e-6)


def test_gamma_diag_value():
    val = gamma(np.diag([1.0, 2.0]), 0.25)
    assert val == pytest.approx(math.log(0.375) + 4 / 3, abs=1e-14)
    assert val == pytest.approx(0.352504, abs=1e-6)


def test_gamma_domain():
    with pytest.raises(DomainError):
        gamma(np.diag([1.0, 2.0]), 0.5)
    with pytest.raises(DomainError):
        gamma(np.diag([1.0, 2.0]), -0.1)
    with pytest.raises(DomainError):
        gamma(np.diag([1.0, -1.0]), 0.1)


@pytest.mark.parametrize("P, c, theta", [
    (np.array([[1.0]]), 1 - math.log(2), 0.5),
    (np.diag([1.0, 2.0]), math.log(0.375) + 4 / 3, 0.25),
])
def test_solve_theta_inverts_examples(P, c, theta):
    assert solve_theta(P, c) == pytest.approx(theta, abs=1e-8)


def test_solve_theta_zero_c_is_exact():
    assert solve_theta(np.diag([3.0, 0.1]), 0.0) == 0.0


def test_solve_theta_rejects_negative_c():
    with pytest.raises(ValueError):
        solve_theta(np.eye(2), -1e-3)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
def test_gamma_matches_dense_oracle(seed, n):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, n, 0.1, 5.0)
    theta = rng.uniform(0, 0.99) / np.linalg.eigvalsh(P)[-1]
    assert gamma(P, theta) == pytest.approx(gamma_oracle(P, theta), rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
def test_gamma_increasing_in_theta(seed, n):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, n, 0.1, 5.0)
    top = 1.0 / np.linalg.eigvalsh(P)[-1]
    t1, t2 = np.sort(rng.uniform(0, 0.999 * top, 2))
    if t2 - t1 < 1e-9 * top:
        return
    assert gamma(P, t1) < gamma(P, t2)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6), c=st.floats(0.0, 1.0))
def test_bisection_round_trip(seed, n, c):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, n, 0.05, 10.0)
    theta = solve_theta(P, c)
    assert 0 <= theta < 1.0 / np.linalg.eigvalsh(P)[-1]
    assert abs(gamma(P, theta) - c) <= BISECT_TOL


def test_inflate_zero_theta_copies():
    P = np.diag([1.0, 2.0])
    V = inflate(P, 0.0)
    assert np.array_equal(V, P) and V is not P


def test_inflate_matches_inverse_formula(rng):
    P = random_spd(rng, 4)
    theta = 0.5 / np.linalg.eigvalsh(P)[-1]
    want = np.linalg.inv(np.linalg.inv(P) - theta * np.eye(4))
    np.testing.assert_allclose(inflate(P, theta), want, rtol=1e-12)


def test_scalar_step_c0():
    m = scalar_model()
    s = robust_predict_step(m, RobustFilterState.initial([0.0], [[1.0]]), [1.0], 0.0)
    assert s.G[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert s.x_hat[0] == pytest.approx(0.5, abs=1e-15)
    assert s.P[0, 0] == pytest.approx(1.5, abs=1e-15)
    assert s.V[0, 0] == s.P[0, 0]
    assert s.theta == 0.0


def test_scalar_step_robust():
    # gamma(1.5, 0.2) = ln 0.7 + 0.3/0.7
    c_exact = math.log(0.7) + 0.3 / 0.7
    m = scalar_model()
    s = robust_predict_step(m, RobustFilterState.initial([0.0], [[1.0]]), [1.0], c_exact)
    assert s.theta == pytest.approx(0.2, abs=1e-9)
    assert s.V[0, 0] == pytest.approx(1.0 / (2.0 / 3.0 - 0.2), rel=1e-9)
    assert s.V[0, 0] == pytest.approx(2.142857, abs=1e-6)
    assert s.G[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_truncated_tolerance_stays_close():
    m = scalar_model()
    s = robust_predict_step(m, RobustFilterState.initial([0.0], [[1.0]]), [1.0], 0.0718961)
    assert s.theta == pytest.approx(0.2, abs=1e-6)
    assert s.V[0, 0] == pytest.approx(2.142857, rel=1e-6)


def test_deterministic_input_is_added():
    m = scalar_model()
    st0 = RobustFilterState.initial([0.0], [[1.0]])
    a = robust_predict_step(m, st0, [1.0], 0.01)
    b = robust_predict_step(m, st0, [1.0], 0.01, r=[2.0])
    assert b.x_hat[0] - a.x_hat[0] == pytest.approx(2.0)
    assert np.array_equal(a.V, b.V)


def test_measurement_length_checked():
    with pytest.raises(ValueError):
        robust_predict_step(scalar_model(), RobustFilterState.initial([0.0], [[1.0]]), [1.0, 2.0], 0.0)


def test_c0_matches_textbook_predictor(rng):
    for _ in range(20):
        m = random_model(rng)
        V0 = random_spd(rng, m.n)
        x0 = rng.standard_normal(m.n)
        ys = rng.standard_normal((100, m.C.shape[0]))
        ref = textbook_kf(m.A, m.BBt, m.C, m.R, V0, ys, x0)
        s = RobustFilterState.initial(x0, V0)
        for y, (x_ref, P_ref, G_ref) in zip(ys, ref):
            s = robust_predict_step(m, s, y, 0.0)
            scale = lambda a: max(np.linalg.norm(a), 1.0)
            assert np.linalg.norm(s.x_hat - x_ref) <= 1e-10 * scale(x_ref)
            assert np.linalg.norm(s.V - P_ref) <= 1e-10 * scale(P_ref)
            assert np.linalg.norm(s.G - G_ref) <= 1e-10 * scale(G_ref)


def test_V_dominates_P_and_symmetric(rng):
    m = random_model(rng, n=3, N=2)
    V = np.eye(3)
    for _ in range(30):
        G, P, theta, V = robust_covariance_step(m, V, 0.05)
        assert np.linalg.eigvalsh(V - P)[0] > -1e-12
        assert theta > 0
        assert np.max(np.abs(V - V.T)) <= 1e-13 * np.max(np.abs(V))
        assert np.max(np.abs(P - P.T)) <= 1e-13 * np.max(np.abs(P))


def test_steady_state_c0_solves_dare(rng):
    m = random_model(rng, n=3, N=2)
    ss = steady_state(m, 0.0)
    # predictor form: filter DARE on (A^T, C^T)
    X = solve_discrete_are(m.A.T, m.C.T, m.BBt, m.R)
    np.testing.assert_allclose(ss.P, X, rtol=1e-8, atol=1e-10)
    assert ss.theta == 0.0


def test_steady_state_scalar_fixed_point():
    m = scalar_model()
    ss = steady_state(m, 0.01)
    assert abs(gamma(ss.P, ss.theta) - 0.01) <= BISECT_TOL
    assert ss.residual < 1e-8


def test_steady_state_unique():
    m = scalar_model()
    a = steady_state(m, 0.01, V0=[[0.1]])
    b = steady_state(m, 0.01, V0=[[10.0]])
    np.testing.assert_allclose(a.P, b.P, atol=1e-8)


def test_steady_state_reports_failure():
    m = scalar_model()
    with pytest.raises(ConvergenceError) as info:
        steady_state(m, 0.01, max_iter=2)
    assert info.value.last is not None


def test_pure_python_kernels_agree():
    from drkf import _backend

    rng = np.random.default_rng(3)
    for _ in range(50):
        d = np.sort(rng.uniform(0.05, 5.0, rng.integers(1, 7)))
        theta = rng.uniform(0, 0.99) / d[-1]
        assert _backend.gamma_eigs(d, theta) == pytest.approx(_pykernels.gamma_eigs(d, theta), rel=1e-13)
        c = rng.uniform(1e-4, 1.0)
        a, ia = _backend.bisect_theta_eigs(d, c, 1e-10, 200, 1e-12)
        b, ib = _pykernels.bisect_theta_eigs(d, c, 1e-10, 200, 1e-12)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-15)
