"""Reference controls for the three risk preferences.

Risk-seeking and risk-averse robots score candidate controls by the norm of
the parameter covariance two steps ahead, obtained by running two virtual RLS
updates with zero innovation: the first one is fixed by the current
observation, the second depends on where the candidate control puts the robot.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .adapt import BeliefState, build_phi, covariance_norm, covariance_step, gain_update
from .features import FeatureMap, History
from .world import AgentState, RobotDynamics, goal_state


class Preference(str, Enum):
    NEUTRAL = "neutral"
    SEEKING = "seeking"
    AVERSE = "averse"


@dataclass(frozen=True)
class RiskPreference:
    tag: Preference = Preference.NEUTRAL
    k_p: float = 2.0
    k_d: float = 2.5
    grid: int = 5
    goal_bias: float = 0.0
    norm: str = "fro"

    def __post_init__(self):
        object.__setattr__(self, "tag", Preference(self.tag))
        if self.grid < 2:
            raise ValueError("need at least a 2x2 candidate grid")

    @property
    def K_fb(self) -> np.ndarray:
        return np.hstack([self.k_p * np.eye(2), self.k_d * np.eye(2)])

    @property
    def n_candidates(self) -> int:
        return self.grid**2 + 1

    def is_stabilizing(self, dyn: RobotDynamics) -> bool:
        closed = dyn.drift_matrix - dyn.input_matrix @ self.K_fb
        return bool(np.max(np.abs(np.linalg.eigvals(closed))) < 1.0)


@dataclass
class ExplorationInfo:
    costs: np.ndarray
    candidates: np.ndarray
    chosen: int
    tied: bool = False
    extra: dict = field(default_factory=dict)


def risk_neutral(pref: RiskPreference, x_R: AgentState, x_G_R, dyn: RobotDynamics) -> np.ndarray:
    u = -pref.K_fb @ (x_R.as_vector() - goal_state(x_G_R))
    return dyn.clip(u, x_R)


def candidate_grid(pref: RiskPreference, dyn: RobotDynamics, x_R: AgentState | None = None) -> np.ndarray:
    lo, hi = dyn.bounds(x_R)
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], pref.grid), np.linspace(lo[1], hi[1], pref.grid), indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def lookahead_costs(
    U: np.ndarray,
    history: History,
    belief: BeliefState,
    dyn: RobotDynamics,
    feature_map: FeatureMap,
    norm: str = "fro",
) -> np.ndarray:
    """Norm of the parameter covariance two steps ahead for each row of ``U``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    x_H = history.human[-1]
    u_H = feature_map(history.human, history.robot, history.goal)
    Phi0 = build_phi(belief, x_H, u_H)
    x_hat = belief.known_part(x_H, u_H) + Phi0 @ belief.theta_hat
    F1 = gain_update(belief.F, Phi0, belief.forgetting)
    mean1, sigma1 = covariance_step(F1, belief.sigma_tt, belief.mean_err, Phi0, belief.noise_cov, belief.dtheta)

    x_R1 = history.robot[-1] @ dyn.drift_matrix.T + U @ dyn.input_matrix.T
    nxt = history.advance_batch(x_hat, x_R1, history.goal[-1])
    u_H1 = feature_map(nxt.human, nxt.robot, nxt.goal)
    Phi1 = build_phi(belief, np.broadcast_to(x_hat, (len(U), 4)), u_H1)
    F2 = gain_update(F1, Phi1, belief.forgetting)
    _, sigma2 = covariance_step(F2, sigma1, mean1, Phi1, belief.noise_cov, belief.dtheta)
    return covariance_norm(sigma2, norm)


def lookahead_cost(u_R, history: History, belief: BeliefState, dyn: RobotDynamics, feature_map: FeatureMap,
                   norm: str = "fro") -> float:
    return float(lookahead_costs(np.asarray(u_R, dtype=float)[None], history, belief, dyn, feature_map, norm)[0])


def select(scores: np.ndarray, candidates: np.ndarray, rtol: float = 1e-10) -> tuple[int, bool]:
    """Index of the best score; near-ties go to the smallest norm, then lexicographic order."""
    best = np.max(scores)
    tol = rtol * np.max(np.abs(scores)) if np.any(scores) else 0.0
    tied = np.flatnonzero(scores >= best - tol)
    if len(tied) == 1:
        return int(tied[0]), False
    norms = np.round(np.linalg.norm(candidates[tied], axis=1), 12)
    order = np.lexsort((candidates[tied, 1], candidates[tied, 0], norms))
    return int(tied[order[0]]), True


def risk_extremum(
    pref: RiskPreference,
    history: History,
    belief: BeliefState,
    dyn: RobotDynamics,
    feature_map: FeatureMap,
    x_G_R=None,
) -> tuple[np.ndarray, ExplorationInfo]:
    """Grid search maximising (seeking) or minimising (averse) the lookahead cost."""
    if pref.tag is Preference.NEUTRAL:
        raise ValueError("risk_extremum needs a seeking or averse preference")
    robot = AgentState.from_vector(history.robot[-1])
    cands = candidate_grid(pref, dyn, robot)
    if x_G_R is not None:
        cands = np.vstack([cands, risk_neutral(pref, robot, x_G_R, dyn)])
    J = lookahead_costs(cands, history, belief, dyn, feature_map, pref.norm)
    scores = J if pref.tag is Preference.SEEKING else -J
    if pref.goal_bias and x_G_R is not None:
        nxt = robot.pos + dyn.ts * robot.vel
        vel = robot.vel + dyn.ts * cands
        # goal progress measured one step further, where the control shows up in position
        dist = np.linalg.norm(nxt + dyn.ts * vel - np.asarray(x_G_R), axis=1)
        scores = scores - pref.goal_bias * dist**2
    idx, tied = select(scores, cands)
    return cands[idx], ExplorationInfo(J, cands, idx, tied)
