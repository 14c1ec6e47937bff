"""Simulated potential-field human and the feature vector shared with the robot's model.

The human is a forward-Euler double integrator whose acceleration is

    a = -k_p (p_H - p_G) - k_d v_H + gamma * k_repel * (p_H - p_R) / d**2

which is linear in the feature vector ``[p_H - p_G, (p_H - p_R) / d**2]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import AgentState, EnvState, double_integrator_drift

D_EPS = 0.01


def default_noise_cov(pos_std: float = 0.01, vel_std: float = 0.02) -> np.ndarray:
    return np.diag([pos_std**2, pos_std**2, vel_std**2, vel_std**2])


def feature_array(p_H, p_R, p_G, d_eps: float = D_EPS) -> np.ndarray:
    """Vectorised features over any leading batch dimensions (last axis = xy)."""
    p_H, p_R, p_G = (np.asarray(a, dtype=float) for a in (p_H, p_R, p_G))
    diff = p_H - p_R
    d = np.maximum(np.linalg.norm(diff, axis=-1, keepdims=True), d_eps)
    return np.concatenate(np.broadcast_arrays(p_H - p_G, diff / d**2), axis=-1)


def features(x_H: AgentState, x_R: AgentState, x_G, d_eps: float = D_EPS) -> np.ndarray:
    """Goal-error and inverse-square repulsion features (4-vector).

    Distances below ``d_eps`` are clamped; use :func:`near_singular` to flag them.
    """
    return feature_array(x_H.pos, x_R.pos, x_G, d_eps)


def near_singular(x_H: AgentState, x_R: AgentState, d_eps: float = D_EPS) -> bool:
    return bool(np.linalg.norm(x_H.pos - x_R.pos) <= d_eps)


@dataclass(frozen=True)
class PotentialFieldHuman:
    k_p: float = 1.0
    k_d: float = 1.4
    k_repel: float = 1.0
    gamma: float = 30.0
    ts: float = 0.1
    noise_cov: np.ndarray = field(default_factory=default_noise_cov)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        W = np.asarray(self.noise_cov, dtype=float)
        if W.shape != (4, 4) or not np.allclose(W, W.T):
            raise ValueError("noise_cov must be a symmetric 4x4 matrix")
        if np.linalg.eigvalsh(W).min() < -1e-12:
            raise ValueError("noise_cov must be positive semidefinite")
        object.__setattr__(self, "noise_cov", W)

    @property
    def k_goal(self) -> np.ndarray:
        """Gain on the 4D error to the goal (PD toward a zero-velocity goal)."""
        return np.hstack([self.k_p * np.eye(2), self.k_d * np.eye(2)])

    @property
    def k_repel_matrix(self) -> np.ndarray:
        """Gain on the 4D human-robot state difference; acts on positions only."""
        return np.hstack([self.k_repel * np.eye(2), np.zeros((2, 2))])

    def noise_factor(self) -> np.ndarray:
        vals, vecs = np.linalg.eigh(self.noise_cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

    def acceleration(self, env: EnvState) -> np.ndarray:
        x_H = env.human.as_vector()
        x_R = env.robot.as_vector()
        x_G = np.concatenate([env.human_goal, np.zeros(2)])
        d = max(env.distance, D_EPS)
        return -self.k_goal @ (x_H - x_G) + (self.gamma / d**2) * self.k_repel_matrix @ (x_H - x_R)

    def mean_step(self, env: EnvState) -> np.ndarray:
        x = env.human.as_vector()
        a = self.acceleration(env)
        return np.concatenate([x[:2] + self.ts * x[2:], x[2:] + self.ts * a])


def step_human(h: PotentialFieldHuman, env: EnvState, rng: np.random.Generator | None = None) -> AgentState:
    x = h.mean_step(env)
    if rng is not None:
        x = x + h.noise_factor() @ rng.standard_normal(4)
    return AgentState.from_vector(x)


def ground_truth_params(h: PotentialFieldHuman) -> tuple[np.ndarray, np.ndarray]:
    """Exact (A_H, B_H) with x_H' = A_H x_H + B_H features(x_H, x_R, x_G) when W = 0."""
    A = double_integrator_drift(h.ts)
    A[2:, 2:] -= h.ts * h.k_d * np.eye(2)
    B = np.zeros((4, 4))
    B[2:, :2] = -h.ts * h.k_p * np.eye(2)
    B[2:, 2:] = h.ts * h.gamma * h.k_repel * np.eye(2)
    return A, B
