"""Agent and environment state plus the robot's discrete double-integrator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidStateError(ValueError):
    """Raised when a state or control contains non-finite values."""


def _vec2(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape != (2,):
        raise InvalidStateError(f"{name} must have 2 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError(f"{name} is not finite: {arr}")
    return arr


@dataclass(frozen=True)
class AgentState:
    """Planar position and velocity of one agent."""

    pos: np.ndarray
    vel: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "pos", _vec2(self.pos, "pos"))
        object.__setattr__(self, "vel", _vec2(self.vel, "vel"))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    @classmethod
    def from_vector(cls, x) -> "AgentState":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (4,):
            raise InvalidStateError(f"state vector must be 4-dimensional, got {x.shape}")
        return cls(x[:2], x[2:])


def goal_state(goal) -> np.ndarray:
    """Embed a goal position in state space with zero velocity."""
    return np.concatenate([np.asarray(goal, dtype=float).reshape(2), np.zeros(2)])


@dataclass(frozen=True)
class EnvState:
    human: AgentState
    robot: AgentState
    human_goal: np.ndarray
    robot_goal: np.ndarray
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "human_goal", _vec2(self.human_goal, "human_goal"))
        object.__setattr__(self, "robot_goal", _vec2(self.robot_goal, "robot_goal"))

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.human.pos - self.robot.pos))


@dataclass(frozen=True)
class RobotDynamics:
    """Planar double integrator under zero-order-hold control, x' = drift @ x + input @ u.

    The exact discretisation lets u(k) reach the position at k+1, which the
    two-step exploration lookahead relies on.
    """

    ts: float = 0.1
    control_bound: float = 5.0
    max_speed: float = np.inf

    def __post_init__(self):
        if not self.ts > 0:
            raise ValueError(f"sampling time must be positive, got {self.ts}")
        if not self.control_bound > 0:
            raise ValueError(f"control bound must be positive, got {self.control_bound}")
        if not self.max_speed > 0:
            raise ValueError(f"speed limit must be positive, got {self.max_speed}")

    @property
    def drift_matrix(self) -> np.ndarray:
        return double_integrator_drift(self.ts)

    @property
    def input_matrix(self) -> np.ndarray:
        return np.vstack([0.5 * self.ts**2 * np.eye(2), self.ts * np.eye(2)])

    @property
    def lower(self) -> np.ndarray:
        return -self.control_bound * np.ones(2)

    @property
    def upper(self) -> np.ndarray:
        return self.control_bound * np.ones(2)

    def bounds(self, x_R: AgentState | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Admissible control box; with a state, also keeps each next-velocity axis within max_speed."""
        lo, hi = self.lower, self.upper
        if x_R is None or np.isinf(self.max_speed):
            return lo, hi
        v = x_R.vel
        lo = np.maximum(lo, np.minimum((-self.max_speed - v) / self.ts, 0.0))
        hi = np.minimum(hi, np.maximum((self.max_speed - v) / self.ts, 0.0))
        return lo, hi

    def clip(self, u, x_R: AgentState | None = None) -> np.ndarray:
        lo, hi = self.bounds(x_R)
        return np.clip(np.asarray(u, dtype=float), lo, hi)


def double_integrator_drift(ts: float) -> np.ndarray:
    A = np.eye(4)
    A[0, 2] = A[1, 3] = ts
    return A


def step_robot(dyn: RobotDynamics, x_R: AgentState, u_R) -> AgentState:
    u = np.asarray(u_R, dtype=float).reshape(-1)
    if u.shape != (2,) or not np.all(np.isfinite(u)):
        raise InvalidStateError(f"robot control must be a finite 2-vector, got {u_R!r}")
    x = dyn.drift_matrix @ x_R.as_vector() + dyn.input_matrix @ u
    return AgentState.from_vector(x)
