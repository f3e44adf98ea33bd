import numpy as np
import pytest

from drkf.distributed import (
    NetworkFilterState,
    NodeError,
    diffuse,
    dkf_step,
    incremental_step,
    local_measurements,
    node_schedule,
)
from drkf.model import SensorNetwork, build_diffusion_weights, build_local_models
from drkf.robust_core import RobustFilterState, robust_covariance_step, robust_predict_step

from conftest import random_model, scalar_model, small_model


def run_network(model, net, W, c, ys, x0, V0):
    locals_ = build_local_models(net, model)
    s = NetworkFilterState.initial(net.N, x0, V0)
    out = []
    for y in ys:
        s = dkf_step(s, locals_, W, y.reshape(model.N, model.p), c)
        out.append(s)
    return out


def test_single_node_equals_centralized_scalar():
    m = scalar_model()
    net = SensorNetwork.full(1)
    loc = build_local_models(net, m)[0]
    psi, P, theta, V = incremental_step(loc, np.zeros(1), np.eye(1), [1.0], 0.0)
    assert psi[0] == pytest.approx(0.5) and P[0, 0] == pytest.approx(1.5) and theta == 0.0


@pytest.mark.parametrize("c", [0.0, 0.03])
def test_single_node_reproduces_centralized(c):
    rng = np.random.default_rng(11)
    m = random_model(rng, n=3, N=1, p=2)
    ys = rng.standard_normal((40, 2))
    x0, V0 = np.zeros(3), np.eye(3)
    states = run_network(m, SensorNetwork.full(1), np.eye(1), c, ys, x0, V0)
    s = RobustFilterState.initial(x0, V0)
    for y, ns in zip(ys, states):
        s = robust_predict_step(m, s, y, c)
        np.testing.assert_array_equal(ns.x_hat[0], s.x_hat)
        np.testing.assert_array_equal(ns.V[0], s.V)


def test_full_graph_matches_centralized():
    rng = np.random.default_rng(12)
    m = random_model(rng, n=3, N=3, p=1)
    ys = rng.standard_normal((50, 3))
    x0, V0 = rng.standard_normal(3), np.eye(3)
    net = SensorNetwork.full(3)
    W = build_diffusion_weights(net, "degree")
    states = run_network(m, net, W, 0.02, ys, x0, V0)
    s = RobustFilterState.initial(x0, V0)
    for y, ns in zip(ys, states):
        s = robust_predict_step(m, s, y, 0.02)
        for k in range(3):
            assert np.linalg.norm(ns.x_hat[k] - s.x_hat) <= 1e-10 * max(1.0, np.linalg.norm(s.x_hat))
        # every node runs the same recursion, so the nodes stay identical
        assert np.array_equal(ns.x_hat[0], ns.x_hat[1]) and np.array_equal(ns.x_hat[1], ns.x_hat[2])


def test_zero_innovation_gives_pure_prediction():
    m = small_model()
    loc = build_local_models(SensorNetwork.line(3), m)[1]
    x = np.array([0.3, -1.2])
    y_loc = loc.C @ x
    psi, *_ = incremental_step(loc, x, np.eye(2), y_loc, 0.02)
    np.testing.assert_allclose(psi, m.A @ x, atol=1e-14)


def test_diffuse_examples():
    psi = np.array([[1.0, 2.0], [3.0, 6.0]])
    np.testing.assert_array_equal(diffuse(np.eye(2), psi), psi)
    np.testing.assert_allclose(diffuse(0.5 * np.ones((2, 2)), psi), [[2.0, 4.0], [2.0, 4.0]])
    net = SensorNetwork.line(4)
    W = build_diffusion_weights(net, "degree")
    z = np.tile([0.7, -0.1], (4, 1))
    np.testing.assert_allclose(diffuse(W, z), z, atol=1e-15)


def test_covariances_independent_of_W_and_data():
    m = small_model()
    net = SensorNetwork.line(3)
    rng = np.random.default_rng(0)
    a = run_network(m, net, build_diffusion_weights(net, "degree"), 0.02,
                    rng.standard_normal((20, 3)), np.zeros(2), np.eye(2))
    b = run_network(m, net, build_diffusion_weights(net, "consensus", 0.2), 0.02,
                    rng.standard_normal((20, 3)), np.ones(2), np.eye(2))
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.V, sb.V) and np.array_equal(sa.theta, sb.theta)


def test_c0_is_standard_diffusion_kf():
    # with theta = 0 the incremental step is a plain local Kalman predictor
    m = small_model()
    net = SensorNetwork.line(3)
    W = build_diffusion_weights(net, "consensus", 0.3).W
    locals_ = build_local_models(net, m)
    rng = np.random.default_rng(2)
    x = np.zeros((3, 2))
    P = np.tile(np.eye(2), (3, 1, 1))
    s = NetworkFilterState.initial(3, np.zeros(2), np.eye(2))
    for _ in range(25):
        y = rng.standard_normal(3)
        psi = np.empty_like(x)
        for k, loc in enumerate(locals_):
            C, R = loc.C, loc.R
            Sg = C @ P[k] @ C.T + R
            G = m.A @ P[k] @ C.T @ np.linalg.inv(Sg)
            psi[k] = m.A @ x[k] + G @ (y[list(loc.neighbors)] - C @ x[k])
            P[k] = m.A @ P[k] @ m.A.T - G @ Sg @ G.T + m.BBt
        x = W.T @ psi
        s = dkf_step(s, locals_, W, y.reshape(3, 1), 0.0)
        np.testing.assert_allclose(s.x_hat, x, rtol=1e-11, atol=1e-12)
        np.testing.assert_allclose(s.V, P, rtol=1e-11, atol=1e-12)


def test_local_measurements_order():
    m = small_model()
    loc = build_local_models(SensorNetwork.line(3), m)[2]
    y = [np.array([10.0]), np.array([11.0]), np.array([12.0])]
    np.testing.assert_array_equal(local_measurements(loc, y), [11.0, 12.0])


def test_deterministic_input_passes_through_diffusion():
    m = small_model()
    net = SensorNetwork.line(3)
    locals_ = build_local_models(net, m)
    W = build_diffusion_weights(net, "degree")
    s = NetworkFilterState.initial(3, np.zeros(2), np.eye(2))
    y = np.zeros((3, 1))
    a = dkf_step(s, locals_, W, y, 0.02)
    b = dkf_step(s, locals_, W, y, 0.02, r=[1.0, -2.0])
    np.testing.assert_allclose(b.x_hat - a.x_hat, np.tile([1.0, -2.0], (3, 1)), atol=1e-14)


@pytest.mark.parametrize("c", [0.0, 0.02])
def test_node_schedule_matches_step_by_step(c):
    rng = np.random.default_rng(8)
    m = random_model(rng, n=3, N=3, p=1)
    net = SensorNetwork.line(3)
    locals_ = build_local_models(net, m)
    sched = node_schedule(locals_, c, np.eye(3), 30, gains=True)
    for k, loc in enumerate(locals_):
        V = np.eye(3)
        for t in range(31):
            G, P, theta, V = robust_covariance_step(loc, V, c)
            np.testing.assert_allclose(sched.P[t + 1, k], P, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(sched.V[t + 1, k], V, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(sched.gains[k][t], G, rtol=1e-9, atol=1e-12)
            assert sched.theta[t, k] == pytest.approx(theta, rel=1e-8, abs=1e-14)


def test_node_schedule_reports_node_on_failure():
    class Broken:
        A = np.eye(1)
        BBt = -10 * np.eye(1)
        S = np.eye(1)

    with pytest.raises(NodeError) as info:
        node_schedule([Broken()], 0.02, np.eye(1), 3)
    assert info.value.node == 0
