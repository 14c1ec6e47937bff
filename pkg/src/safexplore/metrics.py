"""Per-step records and the evaluation metrics computed from them."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .adapt import BeliefState, observation_vector
from .features import FeatureMap
from .human import PotentialFieldHuman
from .safety import SafeControlSet
from .world import AgentState, EnvState, RobotDynamics


@dataclass
class StepRecord:
    k: int
    human: np.ndarray
    robot: np.ndarray
    human_goal: np.ndarray
    robot_goal: np.ndarray
    u_ref: np.ndarray
    u_safe: np.ndarray
    intervened: bool
    infeasible: bool
    phi: float
    phi0: float
    lambda_sea: float
    bound: float
    runtime_error: float
    cov_norm: float
    held_out_error: float = math.nan
    reachable_set: float = math.nan
    j_min: float = math.nan
    j_max: float = math.nan
    chosen: int = -1
    tied: bool = False
    near_singular: bool = False

    def row(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name in _VECTOR_COLUMNS:
                for suffix, v in zip(_VECTOR_COLUMNS[f.name], val):
                    out[f"{f.name}_{suffix}"] = float(v)
            elif isinstance(val, (bool, np.bool_)):
                out[f.name] = int(val)
            else:
                out[f.name] = val
        return out


_VECTOR_COLUMNS = {
    "human": ("px", "py", "vx", "vy"),
    "robot": ("px", "py", "vx", "vy"),
    "human_goal": ("x", "y"),
    "robot_goal": ("x", "y"),
    "u_ref": ("x", "y"),
    "u_safe": ("x", "y"),
}


def csv_columns() -> list[str]:
    cols = []
    for f in fields(StepRecord):
        if f.name in _VECTOR_COLUMNS:
            cols.extend(f"{f.name}_{s}" for s in _VECTOR_COLUMNS[f.name])
        else:
            cols.append(f.name)
    return cols


@dataclass(frozen=True)
class HeldOutSuite:
    """Fixed goal-focused rollouts on which frozen models are scored.

    ``x_H``/``u_H``/``x_next`` hold every (state, features, next state) triple of
    all rollouts; ``initial_conditions`` records the layouts they came from.
    """

    initial_conditions: tuple
    rollout_horizon: int
    x_H: np.ndarray
    u_H: np.ndarray
    x_next: np.ndarray

    def __len__(self) -> int:
        return self.x_H.shape[0]


def held_out_error(frozen_model: BeliefState, suite: HeldOutSuite) -> float:
    """Mean 1-step prediction error of a frozen model over the suite."""
    if len(suite) == 0:
        raise ValueError("held-out suite is empty")
    varphi = observation_vector(frozen_model.mode, suite.x_H, suite.u_H)
    pred = frozen_model.known_part(suite.x_H, suite.u_H) + varphi @ frozen_model.estimated_blocks().T
    return float(np.mean(np.linalg.norm(suite.x_next - pred, axis=1)))


def count_interventions(records) -> int:
    return int(sum(bool(r.intervened) for r in records))


def influence_map(human: PotentialFieldHuman, human_state: AgentState, grid_x, grid_y) -> np.ndarray:
    """How far the noiseless human's state moves in one step for each robot position.

    The human's goal is its own position, so only the robot's influence acts.
    Returns an array of shape (len(grid_y), len(grid_x)).
    """
    field_ = np.zeros((len(grid_y), len(grid_x)))
    x0 = human_state.as_vector()
    for i, y in enumerate(grid_y):
        for j, x in enumerate(grid_x):
            env = EnvState(human_state, AgentState([x, y]), human_state.pos, human_state.pos)
            field_[i, j] = np.linalg.norm(human.mean_step(env) - x0)
    return field_


def reachable_set_size(
    cset: SafeControlSet,
    x_R: AgentState,
    dyn: RobotDynamics,
    n_u: int = 2000,
    grid_res: float = 0.001,
    rng: np.random.Generator | None = None,
) -> float:
    """Monte-Carlo area (m^2) of the one-step safe reachable set of robot positions.

    Controls are sampled uniformly in the nominal control box, the safe ones are
    propagated and the resulting next positions are rasterised on a grid of
    ``grid_res`` anchored at the footprint's corner. Returns occupied cells
    times cell area.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    U = rng.uniform(dyn.lower, dyn.upper, size=(n_u, 2))
    if not np.isinf(cset.S):
        U = U[U @ cset.L <= cset.S]
    if len(U) == 0:
        return 0.0
    nxt = x_R.as_vector() @ dyn.drift_matrix.T + U @ dyn.input_matrix.T
    origin = x_R.pos + dyn.ts * x_R.vel + 0.5 * dyn.ts**2 * dyn.lower
    cells = np.floor((nxt[:, :2] - origin) / grid_res).astype(np.int64)
    return float(len(np.unique(cells, axis=0)) * grid_res**2)


def mean_and_stderr(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return math.nan, math.nan
    se = float(np.std(a, ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0
    return float(np.mean(a)), se


def build_suite(
    layouts,
    truth: PotentialFieldHuman,
    dyn: RobotDynamics,
    robot_controller,
    feature_map: FeatureMap,
    horizon: int,
    rng: np.random.Generator,
) -> HeldOutSuite:
    """Roll out goal-focused robot and ground-truth human from each layout."""
    from .sim import rollout_goal_focused  # local: sim imports this module

    xs, us, ys = [], [], []
    for layout in layouts:
        x_H, u_H, x_next = rollout_goal_focused(layout, truth, dyn, robot_controller, feature_map, horizon, rng)
        xs.append(x_H)
        us.append(u_H)
        ys.append(x_next)
    if not xs:
        empty = np.zeros((0, 4))
        return HeldOutSuite(tuple(layouts), horizon, empty, np.zeros((0, 0)), empty)
    return HeldOutSuite(tuple(layouts), horizon, np.vstack(xs), np.vstack(us), np.vstack(ys))
