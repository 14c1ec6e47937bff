"""Feature maps from a short state history to the model's observation vector."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .human import D_EPS, feature_array


@dataclass(frozen=True)
class History:
    """The last ``window`` human states, robot states and human goals (oldest first).

    Arrays may carry extra leading batch dimensions.
    """

    human: np.ndarray
    robot: np.ndarray
    goal: np.ndarray

    @property
    def window(self) -> int:
        return self.human.shape[-2]

    @classmethod
    def constant(cls, x_H, x_R, goal, window: int) -> "History":
        rep = lambda a: np.repeat(np.asarray(a, dtype=float)[None], window, axis=0)  # noqa: E731
        return cls(rep(x_H), rep(x_R), rep(goal))

    def advance(self, x_H, x_R, goal) -> "History":
        roll = lambda arr, new: np.concatenate([arr[1:], np.asarray(new, dtype=float)[None]])  # noqa: E731
        return History(roll(self.human, x_H), roll(self.robot, x_R), roll(self.goal, goal))

    def advance_batch(self, x_H, x_R, goal) -> "History":
        """Advance one step for a batch of robot states ``x_R`` of shape (C, 4)."""
        x_R = np.asarray(x_R, dtype=float)
        C = x_R.shape[0]

        def roll(arr, new):
            new = np.broadcast_to(np.asarray(new, dtype=float), (C,) + arr.shape[-1:])
            old = np.broadcast_to(arr[1:], (C,) + arr[1:].shape)
            return np.concatenate([old, new[:, None]], axis=1)

        return History(roll(self.human, x_H), roll(self.robot, x_R), roll(self.goal, goal))


class FeatureMap(Protocol):
    window: int

    def __call__(self, human: np.ndarray, robot: np.ndarray, goal: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class AnalyticFeatureMap:
    """Goal error and inverse-square repulsion from the most recent states."""

    d_eps: float = D_EPS
    window: int = 1

    def __call__(self, human, robot, goal):
        human, robot, goal = (np.asarray(a, dtype=float) for a in (human, robot, goal))
        return feature_array(human[..., -1, :2], robot[..., -1, :2], goal[..., -1, :], self.d_eps)
