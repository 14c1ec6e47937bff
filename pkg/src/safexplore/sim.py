"""Closed-loop human-robot episodes."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .adapt import BeliefState, build_phi, covariance_norm, make_belief, predict, update
from .config import ScenarioConfig
from .explore import Preference, RiskPreference, risk_extremum, risk_neutral
from .features import AnalyticFeatureMap, FeatureMap, History
from .human import PotentialFieldHuman, default_noise_cov, ground_truth_params, near_singular, step_human
from .metrics import HeldOutSuite, StepRecord, build_suite, held_out_error, reachable_set_size
from .safety import GeometryError, SafetyIndexParams, monitor, phi, safe_control_set
from .world import AgentState, EnvState, InvalidStateError, RobotDynamics, step_robot


class EpisodeError(RuntimeError):
    """Numerical failure inside an episode, tagged with the offending timestep."""

    def __init__(self, message: str, k: int):
        super().__init__(f"step {k}: {message}")
        self.k = k


@dataclass(frozen=True)
class Layout:
    human_start: np.ndarray
    human_goals: tuple  # ((goal, activation_step), ...) sorted by step, first at 0
    robot_start: np.ndarray
    robot_goal: np.ndarray

    def human_goal_at(self, k: int) -> np.ndarray:
        goal = self.human_goals[0][0]
        for g, step in self.human_goals:
            if step <= k:
                goal = g
        return goal

    def to_dict(self) -> dict:
        return {
            "human_start": self.human_start.tolist(),
            "human_goals": [[*g.tolist(), int(s)] for g, s in self.human_goals],
            "robot_start": self.robot_start.tolist(),
            "robot_goal": self.robot_goal.tolist(),
        }


def _polar(r, angle):
    return r * np.array([np.cos(angle), np.sin(angle)])


def sample_layout(rng: np.random.Generator, radius: float = 4.0, goal_switch_step: int = 50) -> Layout:
    """Crossing layout: both agents start on a circle and head for the far side.

    The human's goal switches once to a random point inside the circle.
    """
    a = rng.uniform(0, 2 * np.pi)
    b = a + rng.choice([-1.0, 1.0]) * rng.uniform(np.pi / 3, 2 * np.pi / 3)
    human_start = _polar(radius * rng.uniform(0.9, 1.1), a)
    human_goal = _polar(radius * rng.uniform(0.9, 1.1), a + np.pi + rng.uniform(-0.3, 0.3))
    robot_start = _polar(radius * rng.uniform(0.9, 1.1), b)
    robot_goal = _polar(radius * rng.uniform(0.9, 1.1), b + np.pi + rng.uniform(-0.3, 0.3))
    second = _polar(radius * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi))
    return Layout(human_start, ((human_goal, 0), (second, goal_switch_step)), robot_start, robot_goal)


def layout_from_config(config: ScenarioConfig, rng: np.random.Generator) -> Layout:
    lay = config.layout
    sampled = sample_layout(rng, lay.radius, lay.goal_switch_step)
    goals = sampled.human_goals
    if lay.human_goals is not None:
        goals = tuple(sorted(((np.asarray(g[:2], dtype=float), int(g[2])) for g in lay.human_goals),
                             key=lambda gs: gs[1]))
    pick = lambda v, default: default if v is None else np.asarray(v, dtype=float)  # noqa: E731
    return Layout(
        pick(lay.human_start, sampled.human_start),
        goals,
        pick(lay.robot_start, sampled.robot_start),
        pick(lay.robot_goal, sampled.robot_goal),
    )


@dataclass
class Setup:
    dyn: RobotDynamics
    truth: PotentialFieldHuman
    safety: SafetyIndexParams
    pref: RiskPreference
    feature_map: FeatureMap
    belief: BeliefState
    layout: Layout
    suite: HeldOutSuite | None


@dataclass
class EpisodeResult:
    records: list
    belief: BeliefState
    setup: Setup


def truth_from_config(config: ScenarioConfig) -> PotentialFieldHuman:
    h = config.human
    return PotentialFieldHuman(
        k_p=h.k_p, k_d=h.k_d, k_repel=h.k_repel, gamma=h.gamma, ts=config.ts,
        noise_cov=default_noise_cov(h.noise_pos_std, h.noise_vel_std),
    )


def preference_from_config(config: ScenarioConfig) -> RiskPreference:
    e = config.explore
    return RiskPreference(config.risk_preference, e.k_p, e.k_d, e.grid, e.goal_bias, config.adaptation.norm)


def rollout_goal_focused(layout, truth, dyn, pref, feature_map, horizon, rng):
    """Goal-focused rollout (no safety monitor); returns (x_H, u_H, x_next) arrays."""
    human = AgentState(layout.human_start)
    robot = AgentState(layout.robot_start)
    hist = History.constant(human.as_vector(), robot.as_vector(), layout.human_goal_at(0), feature_map.window)
    xs, us, ys = [], [], []
    for k in range(horizon):
        goal = layout.human_goal_at(k)
        env = EnvState(human, robot, goal, layout.robot_goal, k)
        us.append(feature_map(hist.human, hist.robot, hist.goal))
        xs.append(human.as_vector())
        u = risk_neutral(pref, robot, layout.robot_goal, dyn)
        human, robot = step_human(truth, env, rng), step_robot(dyn, robot, u)
        ys.append(human.as_vector())
        hist = hist.advance(human.as_vector(), robot.as_vector(), layout.human_goal_at(k + 1))
    n_u = np.size(feature_map(hist.human, hist.robot, hist.goal))
    return np.array(xs).reshape(-1, 4), np.array(us).reshape(-1, n_u), np.array(ys).reshape(-1, 4)


_SUITE_CACHE: dict = {}


def suite_for(config: ScenarioConfig, truth, dyn, feature_map, cache_token=None) -> HeldOutSuite:
    m = config.metrics
    key = json.dumps(
        [m.suite_seed, m.suite_size, config.horizon, config.ts, config.control_bound,
         config.to_dict()["human"], config.to_dict()["explore"], config.to_dict()["layout"], repr(cache_token)],
        sort_keys=True,
    )
    if key not in _SUITE_CACHE:
        rng = np.random.default_rng(m.suite_seed)
        layouts = [sample_layout(rng, config.layout.radius, config.layout.goal_switch_step) for _ in range(m.suite_size)]
        neutral = RiskPreference(Preference.NEUTRAL, config.explore.k_p, config.explore.k_d)
        _SUITE_CACHE[key] = build_suite(layouts, truth, dyn, neutral, feature_map, config.horizon, rng)
        if len(_SUITE_CACHE) > 64:
            _SUITE_CACHE.pop(next(iter(_SUITE_CACHE)))
    return _SUITE_CACHE[key]


def build_setup(config: ScenarioConfig, model=None) -> tuple[Setup, dict]:
    config.validate()
    dyn = RobotDynamics(config.ts, config.control_bound, config.max_speed)
    truth = truth_from_config(config)
    s = config.safety
    safety = SafetyIndexParams(s.d_min, s.k_phi, s.eta_R, s.lambda_0, config.ts)
    pref = preference_from_config(config)
    layout_ss, perturb_ss, noise_ss, reach_ss = np.random.SeedSequence(config.seed).spawn(4)
    layout = layout_from_config(config, np.random.default_rng(layout_ss))
    a = config.adaptation
    if config.human.kind == "neural":
        from .neural import belief_from_model, load_model  # local: optional heavy path

        model = load_model(config.human.model_path) if model is None else model
        feature_map = model.feature_map()
        belief = belief_from_model(model, truth.noise_cov, F0=a.F0, sigma0=a.sigma0,
                                   forgetting=a.forgetting, dtheta=a.dtheta)
        token = id(model)
    else:
        feature_map = AnalyticFeatureMap()
        A_H, B_H = ground_truth_params(truth)
        belief = make_belief(
            config.uncertainty_mode, A_H, B_H, noise_cov=truth.noise_cov,
            rng=np.random.default_rng(perturb_ss), perturbation=a.init_perturbation,
            F0=a.F0, sigma0=a.sigma0, forgetting=a.forgetting, dtheta=a.dtheta,
        )
        token = None
    suite = suite_for(config, truth, dyn, feature_map, token) if config.metrics.held_out else None
    rngs = {"noise": np.random.default_rng(noise_ss), "reach": np.random.default_rng(reach_ss)}
    return Setup(dyn, truth, safety, pref, feature_map, belief, layout, suite), rngs


def run_episode(config: ScenarioConfig, model=None) -> list[StepRecord]:
    return simulate(config, model).records


def simulate(config: ScenarioConfig, model=None) -> EpisodeResult:
    setup, rngs = build_setup(config, model)
    dyn, truth, params, pref, fmap = setup.dyn, setup.truth, setup.safety, setup.pref, setup.feature_map
    layout, belief = setup.layout, setup.belief
    human = AgentState(layout.human_start)
    robot = AgentState(layout.robot_start)
    hist = History.constant(human.as_vector(), robot.as_vector(), layout.human_goal_at(0), fmap.window)
    lam_prev = params.lambda_0
    records: list[StepRecord] = []
    for k in range(config.horizon):
        goal = layout.human_goal_at(k)
        env = EnvState(human, robot, goal, layout.robot_goal, k)
        try:
            x_H = human.as_vector()
            u_H = fmap(hist.human, hist.robot, hist.goal)
            pred = predict(belief, x_H, u_H)
            info = None
            if pref.tag is Preference.NEUTRAL:
                u_ref = risk_neutral(pref, robot, layout.robot_goal, dyn)
            else:
                u_ref, info = risk_extremum(pref, hist, belief, dyn, fmap, x_G_R=layout.robot_goal)
            u_ref = dyn.clip(u_ref, robot)
            phi_val, phi0 = phi(params, env, lam_prev)
            cset = safe_control_set(params, env, pred, dyn, lam_prev)
            if config.safety.enabled:
                u_safe, intervened, infeasible = monitor(cset, u_ref, dyn.bounds(robot))
                intervened = intervened and phi_val >= 0
            else:
                u_safe, intervened, infeasible = u_ref, False, False
            lam_prev = cset.lambda_sea
            reach = math.nan
            if config.metrics.reachable_set:
                reach = reachable_set_size(cset, robot, dyn, config.metrics.n_u, config.metrics.grid_res, rngs["reach"])
            robot1 = step_robot(dyn, robot, u_safe)
            human1 = step_human(truth, env, rngs["noise"])
            runtime_error = float(np.linalg.norm(human1.as_vector() - pred.x_hat_next))
            if config.adaptation.enabled:
                Phi = build_phi(belief, x_H, u_H)
                belief = update(belief, human1, Phi, pred.x_hat_next)
            if not np.all(np.isfinite(belief.theta_hat)):
                raise InvalidStateError("parameter estimate diverged")
        except (InvalidStateError, GeometryError, np.linalg.LinAlgError) as exc:
            raise EpisodeError(str(exc), k) from exc
        records.append(StepRecord(
            k=k,
            human=x_H,
            robot=robot.as_vector(),
            human_goal=goal,
            robot_goal=layout.robot_goal,
            u_ref=u_ref,
            u_safe=u_safe,
            intervened=intervened,
            infeasible=infeasible,
            phi=phi_val,
            phi0=phi0,
            lambda_sea=cset.lambda_sea,
            bound=cset.S,
            runtime_error=runtime_error,
            cov_norm=float(covariance_norm(belief.sigma_tt, config.adaptation.norm)),
            held_out_error=held_out_error(belief, setup.suite) if setup.suite is not None else math.nan,
            reachable_set=reach,
            j_min=float(info.costs.min()) if info else math.nan,
            j_max=float(info.costs.max()) if info else math.nan,
            chosen=info.chosen if info else -1,
            tied=info.tied if info else False,
            near_singular=near_singular(human, robot),
        ))
        human, robot = human1, robot1
        hist = hist.advance(human.as_vector(), robot.as_vector(), layout.human_goal_at(k + 1))
    return EpisodeResult(records, belief, setup)
