import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from safexplore.adapt import Prediction, covariance_step, gain_update, psd_floor
from safexplore.explore import select
from safexplore.human import feature_array
from safexplore.safety import SafetyIndexParams, project, safe_control_set
from safexplore.world import AgentState, EnvState, RobotDynamics, step_robot

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec2 = arrays(float, 2, elements=finite)
vec4 = arrays(float, 4, elements=finite)


@st.composite
def qp_instances(draw):
    L = draw(vec2)
    S = draw(st.floats(-20, 20))
    u_ref = draw(arrays(float, 2, elements=st.floats(-15, 15)))
    lo = -draw(arrays(float, 2, elements=st.floats(0.1, 6)))
    hi = draw(arrays(float, 2, elements=st.floats(0.1, 6)))
    return L, S, u_ref, lo, hi


@settings(max_examples=300, deadline=None)
@given(qp_instances(), arrays(float, (64, 2), elements=st.floats(0, 1)))
def test_projection_is_feasible_and_no_sampled_point_is_closer(inst, probes):
    L, S, u_ref, lo, hi = inst
    u, feasible = project(L, S, u_ref, lo, hi)
    assert np.all(u >= lo) and np.all(u <= hi)
    pts = lo + probes * (hi - lo)
    if feasible:
        assert L @ u <= S + 1e-8 * max(1.0, abs(S))
        ok = pts @ L <= S
        if ok.any():
            best = np.min(np.sum((pts[ok] - u_ref) ** 2, axis=1))
            assert np.sum((u - u_ref) ** 2) <= best + 1e-9
    else:
        assert np.all(pts @ L > S)
        assert L @ u <= np.min(pts @ L) + 1e-9


@settings(max_examples=100, deadline=None)
@given(arrays(float, (4, 8), elements=finite), st.floats(0.5, 1.0), st.integers(0, 2**16))
def test_gain_stays_symmetric_positive_definite(Phi, lam, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(8, 8))
    F = M @ M.T + 0.1 * np.eye(8)
    F1 = gain_update(F, Phi, lam)
    np.testing.assert_array_equal(F1, F1.T)
    assert np.linalg.eigvalsh(F1).min() > 0


@settings(max_examples=100, deadline=None)
@given(arrays(float, (4, 8), elements=finite), st.integers(0, 2**16))
def test_parameter_covariance_stays_psd(Phi, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(8, 8))
    sigma = M @ M.T
    F1 = gain_update(np.eye(8), Phi, 0.98)
    _, s1 = covariance_step(F1, sigma, rng.normal(size=8), Phi, np.eye(4) * 1e-4, rng.normal(size=8) * 0.01)
    np.testing.assert_array_equal(s1, s1.T)
    assert np.linalg.eigvalsh(s1).min() >= -1e-9 * max(1.0, np.abs(s1).max())


@given(arrays(float, (5, 5), elements=finite))
def test_psd_floor_output_is_psd(M):
    S = psd_floor(M + M.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-9 * max(1.0, np.abs(S).max())


@given(vec2, vec2, vec2)
def test_repulsion_feature_magnitude(p_H, p_R, p_G):
    f = feature_array(p_H, p_R, p_G)
    d = max(np.linalg.norm(p_H - p_R), 0.01)
    np.testing.assert_allclose(f[:2], p_H - p_G)
    np.testing.assert_allclose(np.linalg.norm(f[2:]), np.linalg.norm(p_H - p_R) / d**2, rtol=1e-9, atol=1e-12)


@given(vec4, vec2, st.floats(0.01, 0.5))
def test_robot_step_is_affine(x, u, ts):
    dyn = RobotDynamics(ts=ts)
    a = step_robot(dyn, AgentState.from_vector(x), u).as_vector()
    b = step_robot(dyn, AgentState.from_vector(x), np.zeros(2)).as_vector()
    np.testing.assert_allclose(a - b, dyn.input_matrix @ u, atol=1e-9)


@given(vec2, st.floats(0.1, 3.0))
def test_speed_box_always_allows_braking_and_rest(vel, vmax):
    dyn = RobotDynamics(0.1, 5.0, vmax)
    lo, hi = dyn.bounds(AgentState([0, 0], vel))
    assert np.all(lo <= 0) and np.all(hi >= 0) and np.all(lo <= hi)
    # the control that stops the robot fastest along each axis stays admissible
    brake = np.clip(-vel / 0.1, -5.0, 5.0)
    assert np.all(brake >= lo - 1e-12) and np.all(brake <= hi + 1e-12)


@settings(deadline=None)
@given(vec4, vec4, st.floats(0.0, 1.0), st.floats(0.0, 4.0))
def test_bound_is_nonincreasing_in_uncertainty(x_H, x_R, scale, extra):
    e = EnvState(AgentState.from_vector(x_H), AgentState.from_vector(x_R), [0, 0], [0, 0])
    if e.distance < 1e-3:
        return
    p = SafetyIndexParams()
    dyn = RobotDynamics()
    base = np.diag([1.0, 2.0, 3.0, 4.0]) * 1e-3
    lo = safe_control_set(p, e, Prediction(x_H, scale * base), dyn, p.lambda_0)
    hi = safe_control_set(p, e, Prediction(x_H, (scale + extra) * base), dyn, p.lambda_0)
    assert hi.lambda_sea >= lo.lambda_sea >= p.lambda_0
    if np.isfinite(lo.S):
        assert hi.S <= lo.S + 1e-12


@given(arrays(float, 6, elements=st.floats(-5, 5)))
def test_select_returns_a_maximizer(scores):
    cands = np.arange(12.0).reshape(6, 2) - 5
    idx, _ = select(scores, cands)
    assert scores[idx] >= scores.max() - 1e-10 * max(np.abs(scores).max(), 1e-300)
