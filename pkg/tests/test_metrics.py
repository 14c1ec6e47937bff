import math

import numpy as np
import pytest

from safexplore.adapt import Prediction, make_belief
from safexplore.config import ScenarioConfig
from safexplore.explore import RiskPreference
from safexplore.features import AnalyticFeatureMap
from safexplore.human import PotentialFieldHuman, ground_truth_params
from safexplore.metrics import (
    StepRecord, build_suite, count_interventions, csv_columns, held_out_error, influence_map, mean_and_stderr,
    reachable_set_size,
)
from safexplore.safety import SafeControlSet, SafetyIndexParams, monitor, safe_control_set
from safexplore.sim import run_episode, sample_layout
from safexplore.world import AgentState, EnvState, RobotDynamics

DYN = RobotDynamics(0.1, 5.0, 1.25)


def suite_for(h, n=4, horizon=40, seed=0):
    rng = np.random.default_rng(seed)
    layouts = [sample_layout(rng) for _ in range(n)]
    return build_suite(layouts, h, DYN, RiskPreference(), AnalyticFeatureMap(), horizon, rng)


def exact_belief(h):
    A, B = ground_truth_params(h)
    return make_belief("full", A, B, noise_cov=h.noise_cov)


def test_held_out_zero_for_exact_noiseless_model():
    h = PotentialFieldHuman(k_repel=0.15, noise_cov=np.zeros((4, 4)))
    assert held_out_error(exact_belief(h), suite_for(h)) < 1e-12


def test_held_out_is_deterministic_and_does_not_touch_belief():
    h = PotentialFieldHuman(k_repel=0.15)
    b, s = exact_belief(h), suite_for(h)
    before = b.fingerprint()
    assert held_out_error(b, s) == held_out_error(b, s)
    assert b.fingerprint() == before


def test_held_out_noise_floor():
    h = PotentialFieldHuman(k_repel=0.15)
    value = held_out_error(exact_belief(h), suite_for(h, n=10, horizon=100))
    rng = np.random.default_rng(5)
    w = rng.normal(size=(200000, 4)) @ np.sqrt(h.noise_cov)
    norms = np.linalg.norm(w, axis=1)
    se = norms.std() / np.sqrt(1000)  # the suite holds 1000 noise draws
    assert abs(value - norms.mean()) <= 3 * se


def test_empty_suite_rejected():
    h = PotentialFieldHuman()
    s = build_suite([], h, DYN, RiskPreference(), AnalyticFeatureMap(), 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        held_out_error(exact_belief(h), s)


def test_no_interventions_when_far_apart():
    cfg = ScenarioConfig().replace(**{
        "horizon": 50, "layout.human_start": [-30.0, 0.0], "layout.human_goals": [[-35.0, 0.0, 0]],
        "layout.robot_start": [30.0, 0.0], "layout.robot_goal": [35.0, 0.0], "metrics.held_out": False,
    })
    assert count_interventions(run_episode(cfg)) == 0


def record(k, intervened):
    z2, z4 = np.zeros(2), np.zeros(4)
    return StepRecord(k, z4, z4, z2, z2, z2, z2, intervened, False, 0.0, -1.0, 0.01, 0.0, 0.0, 0.0)


def test_count_interventions_on_constructed_trace():
    cset = SafeControlSet(np.array([1.0, 0.0]), -1.0, 0.2, 0.01)
    flags = []
    for u_ref in ([-2.0, 0.0], [0.0, 0.0], [-3.0, 1.0]):
        _, intervened, _ = monitor(cset, u_ref, DYN.bounds())
        flags.append(intervened)
    assert count_interventions([record(k, f) for k, f in enumerate(flags)]) == 1


def test_influence_map_without_interaction():
    h = PotentialFieldHuman(gamma=0.0)
    axis = np.linspace(-3, 3, 13)
    field_ = influence_map(h, AgentState([0.0, 0.0]), axis, axis)
    assert np.abs(field_).max() < 1e-12


def test_influence_map_linear_in_gamma():
    axis = np.linspace(-3, 3, 13)
    f30 = influence_map(PotentialFieldHuman(gamma=30.0), AgentState([0.0, 0.0]), axis, axis)
    f60 = influence_map(PotentialFieldHuman(gamma=60.0), AgentState([0.0, 0.0]), axis, axis)
    np.testing.assert_allclose(f60, 2 * f30, rtol=1e-12)


def test_influence_outside_bubble_grows_with_gamma():
    h30 = PotentialFieldHuman(gamma=30.0, k_repel=0.15)
    h70 = PotentialFieldHuman(gamma=70.0, k_repel=0.15)
    axis = np.array([1.5])
    f30 = influence_map(h30, AgentState([0.0, 0.0]), axis, np.array([0.0]))[0, 0]
    f70 = influence_map(h70, AgentState([0.0, 0.0]), axis, np.array([0.0]))[0, 0]
    assert f70 > 2 * f30


def test_reachable_set_unconstrained_is_full_footprint():
    cset = SafeControlSet(np.array([1.0, 0.0]), np.inf, -1.0, 0.01)
    dyn = RobotDynamics(0.1, 5.0)
    size = reachable_set_size(cset, AgentState([0, 0]), dyn, n_u=20000, grid_res=0.001,
                              rng=np.random.default_rng(0))
    full = (dyn.ts**2 * dyn.control_bound) ** 2  # side 0.05 m
    assert size == pytest.approx(full, rel=0.05)


def test_reachable_set_monotone_in_uncertainty():
    params = SafetyIndexParams()
    e = EnvState(AgentState([0, 0]), AgentState([1.1, 0.3], [-0.4, 0.0]), [0, 0], [0, 0])
    rng = np.random.default_rng(1)
    M = rng.normal(size=(4, 4))
    base = M @ M.T * 1e-3
    sizes = []
    for scale in (0.0, 1.0, 4.0, 16.0):
        pred = Prediction(e.human.as_vector(), scale * base)
        cset = safe_control_set(params, e, pred, DYN, params.lambda_0)
        # paired samples: the same seed for every covariance
        sizes.append(reachable_set_size(cset, e.robot, DYN, rng=np.random.default_rng(7)))
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    assert sizes[0] > sizes[-1]


def test_mean_and_stderr():
    assert mean_and_stderr([1.0, 3.0]) == (2.0, 1.0)
    assert mean_and_stderr([5.0]) == (5.0, 0.0)
    m, s = mean_and_stderr([])
    assert math.isnan(m) and math.isnan(s)


def test_csv_columns_contract():
    cols = csv_columns()
    for name in ("k", "phi", "lambda_sea", "intervened", "infeasible", "runtime_error", "cov_norm",
                 "human_px", "human_vy", "robot_px", "robot_vy", "u_ref_x", "u_safe_y"):
        assert name in cols
    assert list(record(0, True).row()) == cols
