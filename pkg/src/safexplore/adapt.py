"""Recursive least-squares adaptation of a linear human model in belief space.

The model is x_H(k+1) = known(k) + Phi(k) theta + w, where Phi(k) stacks the
observation vector once per state row. Alongside the point estimate theta_hat
the belief carries the learning gain F, the parameter-error covariance
sigma_tt and the mean parameter error, so that every prediction comes with a
state covariance sigma_H = Phi sigma_tt Phi^T + W.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

N_H = 4


class ConfigurationError(ValueError):
    pass


class UncertaintyMode(str, Enum):
    INTRINSIC = "intrinsic"  # estimate A_H, B_H known
    INTERACTIVE = "interactive"  # estimate B_H, A_H known
    FULL = "full"  # estimate both


def observation_vector(mode: UncertaintyMode, x_H, u_H) -> np.ndarray:
    x_H = np.asarray(x_H, dtype=float)
    u_H = np.asarray(u_H, dtype=float)
    if mode is UncertaintyMode.INTRINSIC:
        return x_H
    if mode is UncertaintyMode.INTERACTIVE:
        return u_H
    lead = np.broadcast_shapes(x_H.shape[:-1], u_H.shape[:-1])
    return np.concatenate(
        [np.broadcast_to(x_H, lead + x_H.shape[-1:]), np.broadcast_to(u_H, lead + u_H.shape[-1:])], axis=-1
    )


def kron_rows(varphi: np.ndarray) -> np.ndarray:
    """Block-diagonal observation matrix with N_H copies of varphi^T (batched)."""
    varphi = np.asarray(varphi, dtype=float)
    p = varphi.shape[-1]
    Phi = np.zeros(varphi.shape[:-1] + (N_H, N_H * p))
    for i in range(N_H):
        Phi[..., i, i * p:(i + 1) * p] = varphi
    return Phi


def flatten_params(*blocks: np.ndarray) -> np.ndarray:
    """Row-major flattening of the horizontally stacked estimated blocks."""
    return np.hstack(blocks).reshape(-1)


@dataclass(frozen=True)
class BeliefState:
    theta_hat: np.ndarray
    F: np.ndarray
    sigma_tt: np.ndarray
    mean_err: np.ndarray
    forgetting: float
    dtheta: np.ndarray
    noise_cov: np.ndarray
    mode: UncertaintyMode
    known_A: np.ndarray | None = None
    known_B: np.ndarray | None = None

    def __post_init__(self):
        n = self.theta_hat.shape[0]
        if self.F.shape != (n, n) or self.sigma_tt.shape != (n, n):
            raise ConfigurationError(f"F and sigma_tt must be {n}x{n}")
        if self.mean_err.shape != (n,) or self.dtheta.shape != (n,):
            raise ConfigurationError(f"mean_err and dtheta must have length {n}")
        if n % N_H:
            raise ConfigurationError(f"parameter dimension {n} is not a multiple of {N_H}")
        if not 0 < self.forgetting <= 1:
            raise ConfigurationError(f"forgetting factor must lie in (0, 1], got {self.forgetting}")
        if self.mode is UncertaintyMode.INTRINSIC and self.known_B is None:
            raise ConfigurationError("intrinsic mode needs a known B_H")
        if self.mode is UncertaintyMode.INTERACTIVE and self.known_A is None:
            raise ConfigurationError("interactive mode needs a known A_H")

    @property
    def n_obs(self) -> int:
        return self.theta_hat.shape[0] // N_H

    def estimated_blocks(self) -> np.ndarray:
        """theta_hat reshaped back to the N_H x n_obs parameter matrix."""
        return self.theta_hat.reshape(N_H, self.n_obs)

    def known_part(self, x_H, u_H) -> np.ndarray:
        x_H = np.asarray(x_H, dtype=float)
        u_H = np.asarray(u_H, dtype=float)
        if self.mode is UncertaintyMode.INTRINSIC:
            return u_H @ self.known_B.T
        if self.mode is UncertaintyMode.INTERACTIVE:
            return x_H @ self.known_A.T
        lead = np.broadcast_shapes(x_H.shape[:-1], u_H.shape[:-1])
        return np.zeros(lead + (N_H,))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.theta_hat, self.F, self.sigma_tt, self.mean_err):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode.value,
            "forgetting": self.forgetting,
            "theta_hat": self.theta_hat.tolist(),
            "F": self.F.tolist(),
            "sigma_tt": self.sigma_tt.tolist(),
            "mean_err": self.mean_err.tolist(),
            "dtheta": self.dtheta.tolist(),
            "noise_cov": self.noise_cov.tolist(),
        }
        for name in ("known_A", "known_B"):
            val = getattr(self, name)
            out[name] = None if val is None else val.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BeliefState":
        arr = lambda v: None if v is None else np.asarray(v, dtype=float)  # noqa: E731
        return cls(
            theta_hat=arr(d["theta_hat"]),
            F=arr(d["F"]),
            sigma_tt=arr(d["sigma_tt"]),
            mean_err=arr(d["mean_err"]),
            forgetting=float(d["forgetting"]),
            dtheta=arr(d["dtheta"]),
            noise_cov=arr(d["noise_cov"]),
            mode=UncertaintyMode(d["mode"]),
            known_A=arr(d.get("known_A")),
            known_B=arr(d.get("known_B")),
        )


@dataclass(frozen=True)
class Prediction:
    x_hat_next: np.ndarray
    sigma_H_next: np.ndarray


def make_belief(
    mode: UncertaintyMode | str,
    A_H: np.ndarray,
    B_H: np.ndarray,
    *,
    noise_cov: np.ndarray,
    rng: np.random.Generator | None = None,
    perturbation: float = 0.0,
    F0: float = 1.0,
    sigma0: float = 1.0,
    forgetting: float = 0.98,
    dtheta: float | np.ndarray = 0.0,
) -> BeliefState:
    """Initial belief around (A_H, B_H), with estimated blocks perturbed elementwise."""
    mode = UncertaintyMode(mode)
    blocks = {
        UncertaintyMode.INTRINSIC: (A_H,),
        UncertaintyMode.INTERACTIVE: (B_H,),
        UncertaintyMode.FULL: (A_H, B_H),
    }[mode]
    theta = flatten_params(*blocks)
    if perturbation:
        if rng is None:
            raise ConfigurationError("a perturbed initial guess needs an rng")
        theta = theta + perturbation * rng.standard_normal(theta.shape)
    n = theta.shape[0]
    return BeliefState(
        theta_hat=theta,
        F=F0 * np.eye(n),
        sigma_tt=sigma0 * np.eye(n),
        mean_err=np.zeros(n),
        forgetting=forgetting,
        dtheta=np.broadcast_to(np.asarray(dtheta, dtype=float), (n,)).copy(),
        noise_cov=np.asarray(noise_cov, dtype=float),
        mode=mode,
        known_A=A_H if mode is UncertaintyMode.INTERACTIVE else None,
        known_B=B_H if mode is UncertaintyMode.INTRINSIC else None,
    )


def build_phi(belief: BeliefState, x_H, u_H) -> np.ndarray:
    varphi = observation_vector(belief.mode, x_H, u_H)
    if varphi.shape[-1] != belief.n_obs:
        raise ConfigurationError(
            f"{belief.mode.value} mode expects {belief.n_obs} observations, got {varphi.shape[-1]}"
        )
    return kron_rows(varphi)


def predict(belief: BeliefState, x_H, u_H) -> Prediction:
    x_H = np.asarray(x_H.as_vector() if hasattr(x_H, "as_vector") else x_H, dtype=float)
    Phi = build_phi(belief, x_H, u_H)
    x_hat = belief.known_part(x_H, u_H) + Phi @ belief.theta_hat
    return Prediction(x_hat, state_covariance(Phi, belief.sigma_tt, belief.noise_cov))


def state_covariance(Phi: np.ndarray, sigma_tt: np.ndarray, W: np.ndarray) -> np.ndarray:
    return Phi @ sigma_tt @ np.swapaxes(Phi, -1, -2) + W


def gain_update(F: np.ndarray, Phi: np.ndarray, lam: float) -> np.ndarray:
    """Learning-gain recursion via the matrix inversion lemma (batched)."""
    PhiT = np.swapaxes(Phi, -1, -2)
    FPhiT = F @ PhiT
    inner = lam * np.eye(Phi.shape[-2]) + Phi @ FPhiT
    correction = FPhiT @ np.linalg.solve(inner, np.swapaxes(FPhiT, -1, -2))
    F1 = (F - correction) / lam
    return 0.5 * (F1 + np.swapaxes(F1, -1, -2))


def psd_floor(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    vals, vecs = np.linalg.eigh(S)
    if np.all(vals >= 0):
        return S
    S = (vecs * np.clip(vals, 0.0, None)[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def covariance_step(F1, sigma, mean_err, Phi, W, dtheta):
    """Mean parameter error and parameter covariance after one update (batched).

    Returns (mean_err', sigma') given the new gain F1 = F(k+1).
    """
    PhiT = np.swapaxes(Phi, -1, -2)
    PtP = PhiT @ Phi
    n = sigma.shape[-1]
    mean1 = ((np.eye(n) - F1 @ PtP) @ mean_err[..., None])[..., 0] + dtheta
    sigma_H = state_covariance(Phi, sigma, W)
    drift = mean1[..., :, None] * dtheta[..., None, :]
    sigma1 = (
        F1 @ PhiT @ sigma_H @ Phi @ F1
        - sigma @ PtP @ F1
        - F1 @ PtP @ sigma
        + drift
        + np.swapaxes(drift, -1, -2)
        - np.outer(dtheta, dtheta)
        + sigma
    )
    return mean1, psd_floor(sigma1)


def update(belief: BeliefState, x_H_next_observed, phi: np.ndarray, x_hat_next) -> BeliefState:
    """One belief-space RLS step given the observed next human state."""
    x_obs = np.asarray(
        x_H_next_observed.as_vector() if hasattr(x_H_next_observed, "as_vector") else x_H_next_observed,
        dtype=float,
    )
    innovation = x_obs - np.asarray(x_hat_next, dtype=float)
    F1 = gain_update(belief.F, phi, belief.forgetting)
    theta1 = belief.theta_hat + F1 @ phi.T @ innovation
    mean1, sigma1 = covariance_step(F1, belief.sigma_tt, belief.mean_err, phi, belief.noise_cov, belief.dtheta)
    return replace(belief, theta_hat=theta1, F=F1, sigma_tt=sigma1, mean_err=mean1)


def covariance_norm(sigma_tt, kind: str = "fro") -> float | np.ndarray:
    """Frobenius (default) or spectral norm; batched over leading dimensions."""
    S = np.asarray(sigma_tt, dtype=float)
    if kind == "fro":
        return np.sqrt(np.sum(S * S, axis=(-2, -1)))
    if kind == "spectral":
        return np.linalg.norm(S, ord=2, axis=(-2, -1))
    raise ConfigurationError(f"unknown norm {kind!r}")


class RecursiveHumanModel(BaseEstimator, RegressorMixin):
    """Scikit-learn style wrapper around the belief-space RLS recursion.

    Rows of ``X`` are ``[x_H (4 values), u_H (features)]`` and rows of ``y`` are
    the next human state. ``partial_fit`` applies one recursion per row in
    order; ``fit`` restarts from ``theta0`` first.
    """

    def __init__(
        self,
        mode="full",
        forgetting=0.98,
        F0=1.0,
        sigma0=1.0,
        dtheta=0.0,
        noise_cov=None,
        known_A=None,
        known_B=None,
        theta0=None,
    ):
        self.mode = mode
        self.forgetting = forgetting
        self.F0 = F0
        self.sigma0 = sigma0
        self.dtheta = dtheta
        self.noise_cov = noise_cov
        self.known_A = known_A
        self.known_B = known_B
        self.theta0 = theta0

    def _initial_belief(self, n_features: int) -> BeliefState:
        mode = UncertaintyMode(self.mode)
        n_obs = {
            UncertaintyMode.INTRINSIC: N_H,
            UncertaintyMode.INTERACTIVE: n_features,
            UncertaintyMode.FULL: N_H + n_features,
        }[mode]
        n = N_H * n_obs
        theta = np.zeros(n) if self.theta0 is None else np.asarray(self.theta0, dtype=float).copy()
        W = np.zeros((N_H, N_H)) if self.noise_cov is None else np.asarray(self.noise_cov, dtype=float)
        return BeliefState(
            theta_hat=theta,
            F=self.F0 * np.eye(n),
            sigma_tt=self.sigma0 * np.eye(n),
            mean_err=np.zeros(n),
            forgetting=self.forgetting,
            dtheta=np.broadcast_to(np.asarray(self.dtheta, dtype=float), (n,)).copy(),
            noise_cov=W,
            mode=mode,
            known_A=None if self.known_A is None else np.asarray(self.known_A, dtype=float),
            known_B=None if self.known_B is None else np.asarray(self.known_B, dtype=float),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True)
        self.belief_ = self._initial_belief(X.shape[1] - N_H)
        self.n_features_in_ = X.shape[1]
        return self._consume(X, y)

    def partial_fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True)
        if not hasattr(self, "belief_"):
            self.belief_ = self._initial_belief(X.shape[1] - N_H)
            self.n_features_in_ = X.shape[1]
        return self._consume(X, y)

    def _consume(self, X, y):
        if y.ndim != 2 or y.shape[1] != N_H:
            raise ConfigurationError(f"targets must have {N_H} columns")
        belief = self.belief_
        for row, target in zip(X, y):
            x_H, u_H = row[:N_H], row[N_H:]
            Phi = build_phi(belief, x_H, u_H)
            x_hat = belief.known_part(x_H, u_H) + Phi @ belief.theta_hat
            belief = update(belief, target, Phi, x_hat)
        self.belief_ = belief
        return self

    def predict(self, X):
        check_is_fitted(self, "belief_")
        X = check_array(X)
        x_H, u_H = X[:, :N_H], X[:, N_H:]
        Phi = build_phi(self.belief_, x_H, u_H)
        return self.belief_.known_part(x_H, u_H) + Phi @ self.belief_.theta_hat

    def predict_cov(self, X):
        check_is_fitted(self, "belief_")
        X = check_array(X)
        Phi = build_phi(self.belief_, X[:, :N_H], X[:, N_H:])
        return state_covariance(Phi, self.belief_.sigma_tt, self.belief_.noise_cov)
