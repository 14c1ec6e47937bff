"""Feedforward ReLU model of the human, trained offline and adapted online in its last layer.

The network maps a short window of (human, robot, goal) states to the
standardized increment of the human state. Its last affine layer, rescaled to
physical units, is linear in the post-ReLU activations of the layer before it,
so those activations (plus a constant 1) serve as the observation vector for
the recursive estimator and the last-layer weights as its parameters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adapt import BeliefState, UncertaintyMode, predict
from .explore import Preference, RiskPreference, risk_neutral
from .features import History
from .human import PotentialFieldHuman, step_human
from .world import AgentState, EnvState, RobotDynamics, step_robot

MODEL_FORMAT = "safexplore-mlp"
MODEL_VERSION = 1
N_H = 4
FRAME = 10  # human (4) + robot (4) + goal (2) per time step


class TrainingError(RuntimeError):
    """Training diverged; carries the epoch and the offending loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss {loss:.3e}")
        self.epoch = epoch
        self.loss = loss


# ---------------------------------------------------------------- dataset


@dataclass(frozen=True)
class TrajectoryDataset:
    """Windowed trajectories: inputs are flattened (human, robot, goal) windows."""

    inputs: np.ndarray  # (n, (N+1) * 10)
    labels: np.ndarray  # (n, 4), next human state
    history_len: int
    trajectory_index: np.ndarray  # (n,), source trajectory of every pair

    def __len__(self) -> int:
        return self.labels.shape[0]


def window_inputs(human, robot, goal) -> np.ndarray:
    """Flatten (..., w, 4), (..., w, 4), (..., w, 2) windows into (..., w * 10) network inputs."""
    human, robot, goal = (np.asarray(a, dtype=float) for a in (human, robot, goal))
    lead = human.shape[:-2]
    return np.concatenate([
        human.reshape(lead + (-1,)),
        np.broadcast_to(robot, lead + robot.shape[-2:]).reshape(lead + (-1,)),
        np.broadcast_to(goal, lead + goal.shape[-2:]).reshape(lead + (-1,)),
    ], axis=-1)


def windows_from_trajectory(human, robot, goal, history_len: int) -> tuple[np.ndarray, np.ndarray]:
    """All (window, next human state) pairs of one trajectory with T+1 states."""
    human, robot, goal = (np.asarray(a, dtype=float) for a in (human, robot, goal))
    T = human.shape[0] - 1
    w = history_len + 1
    idx = np.arange(history_len, T)[:, None] + np.arange(-history_len, 1)[None, :]
    X = window_inputs(human[idx], robot[idx], goal[idx])
    y = human[np.arange(history_len, T) + 1]
    assert X.shape == (T - history_len, w * FRAME)
    return X, y


def generate_trajectory(truth: PotentialFieldHuman, dyn: RobotDynamics, layout, horizon: int, rng,
                        pref: RiskPreference | None = None):
    """Roll out the human against a goal-seeking robot; returns (human, robot, goal) with horizon+1 rows."""
    pref = pref or RiskPreference(Preference.NEUTRAL)
    human = AgentState(layout.human_start)
    robot = AgentState(layout.robot_start)
    hs, rs, gs = [human.as_vector()], [robot.as_vector()], [layout.human_goal_at(0)]
    for k in range(horizon):
        env = EnvState(human, robot, layout.human_goal_at(k), layout.robot_goal, k)
        u = risk_neutral(pref, robot, layout.robot_goal, dyn)
        human, robot = step_human(truth, env, rng), step_robot(dyn, robot, u)
        hs.append(human.as_vector())
        rs.append(robot.as_vector())
        gs.append(layout.human_goal_at(k + 1))
    return np.array(hs), np.array(rs), np.array(gs)


def generate_dataset(truth: PotentialFieldHuman, dyn: RobotDynamics, *, n_trajectories: int, horizon: int = 100,
                     history_len: int = 3, seed: int = 0, radius: float = 4.0,
                     goal_switch_step: int = 50) -> TrajectoryDataset:
    from .sim import sample_layout  # sim imports this module lazily; keep the cycle one-way at import time

    children = np.random.SeedSequence(seed).spawn(n_trajectories)
    Xs, ys, ids = [], [], []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        layout = sample_layout(rng, radius, goal_switch_step)
        X, y = windows_from_trajectory(*generate_trajectory(truth, dyn, layout, horizon, rng), history_len)
        Xs.append(X)
        ys.append(y)
        ids.append(np.full(len(y), i))
    if not Xs:
        width = (history_len + 1) * FRAME
        return TrajectoryDataset(np.zeros((0, width)), np.zeros((0, N_H)), history_len, np.zeros(0, dtype=int))
    return TrajectoryDataset(np.vstack(Xs), np.vstack(ys), history_len, np.concatenate(ids))


# ---------------------------------------------------------------- network


def _relu(z):
    return np.maximum(z, 0.0)


class MLP:
    """Plain affine/ReLU stack; the last layer is linear."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator) -> "MLP":
        Ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            Ws.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            bs.append(np.zeros(fan_out))
        return cls(Ws, bs)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def hidden(self, X) -> np.ndarray:
        """Post-ReLU activations of the second to last layer."""
        h = np.asarray(X, dtype=float)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = _relu(h @ W + b)
        return h

    def forward(self, X) -> np.ndarray:
        return self.hidden(X) @ self.weights[-1] + self.biases[-1]

    def loss_and_grads(self, X, Y) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Mean squared error over all outputs and its gradients."""
        acts = [np.asarray(X, dtype=float)]
        pre = []
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = acts[-1] @ W + b
            pre.append(z)
            acts.append(_relu(z))
        out = acts[-1] @ self.weights[-1] + self.biases[-1]
        diff = out - Y
        loss = float(np.mean(diff**2))
        g = 2.0 * diff / diff.size
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gW[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            if i:
                g = (g @ self.weights[i].T) * (pre[i - 1] > 0)
        return loss, gW, gb

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for k in range(len(self.weights)):
            for arr in (self.weights[k], self.biases[k]):
                arr[...] = flat[i:i + arr.size].reshape(arr.shape)
                i += arr.size

    def flat_grad(self, X, Y) -> tuple[float, np.ndarray]:
        loss, gW, gb = self.loss_and_grads(X, Y)
        return loss, np.concatenate([p.ravel() for pair in zip(gW, gb) for p in pair])


class Adam:
    """Bias-corrected adaptive-moment optimizer over a list of arrays (updated in place)."""

    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_mlp(net: MLP, X, Y, *, epochs: int, lr: float = 1e-3, batch: int = 64,
              rng: np.random.Generator | None = None, diverge_at: float = 1e6) -> list[float]:
    """Minibatch Adam on MSE; returns the full-data loss after every epoch."""
    rng = rng or np.random.default_rng(0)
    params = [p for pair in zip(net.weights, net.biases) for p in pair]
    opt = Adam(params, lr=lr)
    n = len(X)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            sel = order[start:start + batch]
            _, gW, gb = net.loss_and_grads(X[sel], Y[sel])
            opt.step([g for pair in zip(gW, gb) for g in pair])
        loss = float(np.mean((net.forward(X) - Y) ** 2))
        if not np.isfinite(loss) or loss > diverge_at:
            raise TrainingError(epoch, loss)
        history.append(loss)
    return history


# ---------------------------------------------------------------- human model


@dataclass(frozen=True)
class NeuralFeatureMap:
    """History window -> [post-ReLU activations of the second to last layer, 1]."""

    model: "MLPHumanModel"
    window: int

    def __call__(self, human, robot, goal):
        return self.model.features(window_inputs(human, robot, goal))


class MLPHumanModel(BaseEstimator, RegressorMixin):
    """Next-human-state regressor on flattened history windows.

    Rows of ``X`` are windows laid out as [human frames, robot frames, goal
    frames], oldest first; ``y`` is the next human state. The network predicts
    the standardized increment over the latest human state.
    """

    def __init__(self, history_len=3, hidden=32, n_hidden_layers=3, epochs=50, lr=1e-3, batch=64, random_state=0):
        self.history_len = history_len
        self.hidden = hidden
        self.n_hidden_layers = n_hidden_layers
        self.epochs = epochs
        self.lr = lr
        self.batch = batch
        self.random_state = random_state

    # window bookkeeping
    @property
    def window(self) -> int:
        return self.history_len + 1

    def _current_state(self, X) -> np.ndarray:
        i = 4 * self.history_len
        return X[..., i:i + N_H]

    def _check_width(self, X):
        width = self.window * FRAME
        if X.shape[-1] != width:
            raise ValueError(f"expected windows of width {width}, got {X.shape[-1]}")

    def _standardize(self, X):
        return (X - self.x_mean_) / self.x_std_

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._check_width(X)
        if y.shape[1] != N_H:
            raise ValueError(f"labels must be {N_H}-dimensional states")
        rng = np.random.default_rng(self.random_state)
        delta = y - self._current_state(X)
        self.x_mean_ = X.mean(axis=0)
        self.x_std_ = np.where(X.std(axis=0) > 1e-12, X.std(axis=0), 1.0)
        self.y_mean_ = delta.mean(axis=0)
        self.y_std_ = np.where(delta.std(axis=0) > 1e-12, delta.std(axis=0), 1.0)
        sizes = [X.shape[1]] + [self.hidden] * self.n_hidden_layers + [N_H]
        self.net_ = MLP.init(sizes, rng)
        self.loss_curve_ = train_mlp(
            self.net_, self._standardize(X), (delta - self.y_mean_) / self.y_std_,
            epochs=self.epochs, lr=self.lr, batch=self.batch, rng=rng,
        )
        self.n_features_in_ = X.shape[1]
        return self

    def features(self, X) -> np.ndarray:
        """Observation vector [h; 1] for (batched) windows."""
        check_is_fitted(self, "net_")
        X = np.asarray(X, dtype=float)
        self._check_width(X)
        h = self.net_.hidden(self._standardize(X))
        return np.concatenate([h, np.ones(h.shape[:-1] + (1,))], axis=-1)

    def last_layer_theta(self) -> np.ndarray:
        """Last layer in physical units, rows = output states, flattened row-major (4 x (hidden+1))."""
        check_is_fitted(self, "net_")
        W, b = self.net_.weights[-1], self.net_.biases[-1]
        rows = np.hstack([W.T * self.y_std_[:, None], (b * self.y_std_ + self.y_mean_)[:, None]])
        return rows.reshape(-1)

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X)
        self._check_width(X)
        out = self.net_.forward(self._standardize(X))
        return self._current_state(X) + out * self.y_std_ + self.y_mean_

    def feature_map(self) -> NeuralFeatureMap:
        return NeuralFeatureMap(self, self.window)

    # serialization
    def to_dict(self) -> dict:
        check_is_fitted(self, "net_")
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": self.get_params(),
            "sizes": self.net_.sizes,
            "x_mean": self.x_mean_.tolist(),
            "x_std": self.x_std_.tolist(),
            "y_mean": self.y_mean_.tolist(),
            "y_std": self.y_std_.tolist(),
            "weights": [W.tolist() for W in self.net_.weights],
            "biases": [b.tolist() for b in self.net_.biases],
            "loss_curve": list(self.loss_curve_),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPHumanModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} model file")
        model = cls(**d["params"])
        model.net_ = MLP(d["weights"], d["biases"])
        if model.net_.sizes != d["sizes"]:
            raise ValueError("layer shapes in the model file are inconsistent")
        model.x_mean_ = np.asarray(d["x_mean"], dtype=float)
        model.x_std_ = np.asarray(d["x_std"], dtype=float)
        model.y_mean_ = np.asarray(d["y_mean"], dtype=float)
        model.y_std_ = np.asarray(d["y_std"], dtype=float)
        model.loss_curve_ = list(d.get("loss_curve", []))
        model.n_features_in_ = model.net_.sizes[0]
        return model


def save_model(model: MLPHumanModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")


def load_model(path) -> MLPHumanModel:
    return MLPHumanModel.from_dict(json.loads(Path(path).read_text()))


def belief_from_model(model: MLPHumanModel, noise_cov, *, F0=1.0, sigma0=1.0, forgetting=0.98,
                      dtheta=0.0) -> BeliefState:
    """Belief whose parameters are the last layer; the latest human state is the known part."""
    theta = model.last_layer_theta()
    n = theta.shape[0]
    return BeliefState(
        theta_hat=theta,
        F=F0 * np.eye(n),
        sigma_tt=sigma0 * np.eye(n),
        mean_err=np.zeros(n),
        forgetting=forgetting,
        dtheta=np.broadcast_to(np.asarray(dtheta, dtype=float), (n,)).copy(),
        noise_cov=np.asarray(noise_cov, dtype=float),
        mode=UncertaintyMode.INTERACTIVE,
        known_A=np.eye(N_H),
    )


# ---------------------------------------------------------------- online use


def train_from_config(config) -> tuple[MLPHumanModel, TrajectoryDataset]:
    """Generate the training set at the configured training influence and fit the network."""
    from .sim import truth_from_config

    nc = config.neural
    truth = truth_from_config(config.replace(**{"human.gamma": nc.gamma_train}))
    dyn = RobotDynamics(config.ts, config.control_bound, config.max_speed)
    data = generate_dataset(truth, dyn, n_trajectories=nc.trajectories, horizon=nc.trajectory_len,
                            history_len=nc.history, seed=nc.seed, radius=config.layout.radius,
                            goal_switch_step=config.layout.goal_switch_step)
    model = MLPHumanModel(history_len=nc.history, hidden=nc.hidden, epochs=nc.epochs, lr=nc.lr,
                          batch=nc.batch, random_state=nc.seed)
    return model.fit(data.inputs, data.labels), data


def nn_adapt_episode(config, model: MLPHumanModel):
    """Closed-loop episode with the network as the robot's human model (online influence from config)."""
    from .sim import simulate

    cfg = config if config.human.kind == "neural" else config.replace(**{"human.kind": "neural",
                                                                        "human.model_path": "<in-memory>"})
    return simulate(cfg, model)


def frozen_runtime_errors(records, belief: BeliefState, feature_map) -> np.ndarray:
    """Runtime error a fixed belief would have had on a logged trajectory (paired comparison)."""
    if len(records) < 2:
        return np.zeros(0)
    first = records[0]
    hist = History.constant(first.human, first.robot, first.human_goal, feature_map.window)
    errs = []
    for rec, nxt in zip(records[:-1], records[1:]):
        u_H = feature_map(hist.human, hist.robot, hist.goal)
        x_hat = predict(belief, rec.human, u_H).x_hat_next
        errs.append(float(np.linalg.norm(nxt.human - x_hat)))
        hist = hist.advance(nxt.human, nxt.robot, nxt.human_goal)
    return np.array(errs)
