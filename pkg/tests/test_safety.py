import numpy as np
import pytest

from safexplore.adapt import Prediction
from safexplore.safety import (
    GeometryError, SafeControlSet, SafetyIndexParams, monitor, phi, phi_gradients, project, realized_phi_rate,
    safe_control_set, uncertainty_allowance,
)
from safexplore.world import AgentState, EnvState, RobotDynamics, step_robot

P = SafetyIndexParams()
DYN = RobotDynamics()


def env(h, r, hv=(0, 0), rv=(0, 0)):
    return EnvState(AgentState(h, hv), AgentState(r, rv), [0, 0], [0, 0])


def prediction(e, sigma=np.zeros((4, 4))):
    return Prediction(e.human.as_vector(), sigma)


def test_boundary_value():
    value, phi0 = phi(P, env([0, 0], [1, 0]), lambda_sea=0.0)
    assert value == pytest.approx(P.margin(0.0))  # d = d_min and d_dot = 0 leave only rho
    assert phi0 == 0.0


def test_far_apart_is_safe():
    value, phi0 = phi(P, env([0, 0], [10, 0]))
    assert value < 0 and phi0 < 0


def test_approaching_raises_index():
    still, _ = phi(P, env([0, 0], [2, 0]))
    closing, _ = phi(P, env([0, 0], [2, 0], rv=(-1, 0)))
    assert closing - still == pytest.approx(P.k_phi * 1.0)


def test_coincident_agents_rejected():
    with pytest.raises(GeometryError):
        phi(P, env([1, 1], [1, 1]))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x_H, x_R = rng.normal(size=4) * 2, rng.normal(size=4) * 2
        e = EnvState(AgentState.from_vector(x_H), AgentState.from_vector(x_R), [0, 0], [0, 0])
        g_R, g_H = phi_gradients(P, e)
        h = 1e-6
        fd_R, fd_H = np.zeros(4), np.zeros(4)
        for i in range(4):
            dx = np.eye(4)[i] * h
            f = lambda xh, xr: phi(P, EnvState(AgentState.from_vector(xh), AgentState.from_vector(xr), [0, 0], [0, 0]))[0]  # noqa: E731
            fd_R[i] = (f(x_H, x_R + dx) - f(x_H, x_R - dx)) / (2 * h)
            fd_H[i] = (f(x_H + dx, x_R) - f(x_H - dx, x_R)) / (2 * h)
        assert np.linalg.norm(g_R - fd_R) <= 1e-6 * np.linalg.norm(g_R)
        assert np.linalg.norm(g_H - fd_H) <= 1e-6 * np.linalg.norm(g_H)


def test_allowance_without_uncertainty():
    p = SafetyIndexParams(lambda_0=0.0)
    assert uncertainty_allowance(p, np.ones(4), np.zeros((4, 4))) == 0.0


def test_allowance_scales_with_sqrt_covariance():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(4, 4))
    S = M @ M.T
    g = rng.normal(size=4)
    a1 = uncertainty_allowance(P, g, S) - P.lambda_0
    a4 = uncertainty_allowance(P, g, 4 * S) - P.lambda_0
    assert a4 == pytest.approx(2 * a1, rel=1e-12)


def test_negative_index_leaves_controls_free():
    e = env([0, 0], [8, 0])
    cset = safe_control_set(P, e, prediction(e), DYN)
    assert np.isinf(cset.S)
    assert cset.contains([5.0, -5.0])
    u, intervened, infeasible = monitor(cset, [9.0, 0.0], DYN.bounds())
    np.testing.assert_array_equal(u, [5.0, 0.0])
    assert intervened and not infeasible  # box clipping only


def test_half_space_is_the_linearized_rate_constraint():
    rng = np.random.default_rng(2)
    e = env([0, 0], [0.9, 0.2], rv=(-1.0, 0.3))
    cset = safe_control_set(P, e, prediction(e), DYN, P.lambda_0)
    assert cset.phi_value >= 0
    for _ in range(50):
        u = rng.uniform(-5, 5, size=2)
        rate = realized_phi_rate(P, e, step_robot(DYN, e.robot, u).as_vector(), e.human.as_vector(), DYN.ts)
        # L u <= S is exactly rate <= -eta_R - lambda_sea when the human is predicted to stay put
        assert (cset.L @ u <= cset.S) == (rate <= -P.eta_R - cset.lambda_sea)


def test_more_uncertainty_never_enlarges_safe_set():
    rng = np.random.default_rng(3)
    e = env([0, 0], [0.9, 0.2], rv=(-1.0, 0.3))
    M = rng.normal(size=(4, 4))
    base = M @ M.T * 1e-3
    prev = np.inf
    for scale in (0.0, 0.5, 1.0, 2.0, 8.0):
        cset = safe_control_set(P, e, prediction(e, scale * base), DYN, P.lambda_0)
        assert cset.lambda_sea >= P.lambda_0
        assert cset.S <= prev
        prev = cset.S


def test_monitor_keeps_safe_reference():
    cset = SafeControlSet(np.array([1.0, 0.0]), 1.0, 0.5, 0.01)
    u, intervened, infeasible = monitor(cset, [0.5, 2.0], DYN.bounds())
    np.testing.assert_array_equal(u, [0.5, 2.0])
    assert not intervened and not infeasible


def test_monitor_projects_onto_half_space():
    cset = SafeControlSet(np.array([1.0, 1.0]), 0.0, 0.5, 0.01)
    u, intervened, _ = monitor(cset, [1.0, 1.0], DYN.bounds())
    np.testing.assert_allclose(u, [0.0, 0.0], atol=1e-15)
    assert intervened


def test_projection_onto_box_corner():
    u, ok = project(np.array([1.0, 0.0]), -4.0, np.array([0.0, 9.0]), -np.ones(2) * 5, np.ones(2) * 5)
    np.testing.assert_allclose(u, [-4.0, 5.0])
    assert ok


def test_infeasible_returns_least_violation():
    L = np.array([1.0, -2.0])
    u, ok = project(L, -20.0, np.zeros(2), -np.ones(2) * 5, np.ones(2) * 5)
    assert not ok
    np.testing.assert_array_equal(u, [-5.0, 5.0])


def test_monitor_rejects_nonfinite_reference():
    cset = SafeControlSet(np.array([1.0, 0.0]), 1.0, 0.5, 0.01)
    with pytest.raises(ValueError):
        monitor(cset, [np.nan, 0.0], DYN.bounds())


def test_params_validation():
    with pytest.raises(ValueError):
        SafetyIndexParams(d_min=0.0)
