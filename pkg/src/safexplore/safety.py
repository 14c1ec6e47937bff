"""Energy-function safety monitor for a double-integrator robot near a human.

The safety index is phi = d_min^2 + rho - d^2 - k_phi * d_dot. When phi >= 0 the
robot control must make phi decrease at rate eta_R plus a 3-sigma allowance for
the predicted human motion; the admissible controls form one half-space
L u <= S, and the monitor returns the admissible control closest to the
reference inside the control box.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .adapt import Prediction
from .world import EnvState, RobotDynamics

INTERVENTION_TOL = 1e-9
_FEAS_TOL = 1e-9


class GeometryError(ValueError):
    """Raised when the two agents coincide and the safety index is undefined."""


@dataclass(frozen=True)
class SafetyIndexParams:
    d_min: float = 1.0
    k_phi: float = 1.0
    eta_R: float = 0.5
    lambda_0: float = 0.01
    ts: float = 0.1

    def __post_init__(self):
        if not (self.d_min > 0 and self.k_phi > 0 and self.eta_R > 0 and self.lambda_0 >= 0 and self.ts > 0):
            raise ValueError(f"invalid safety parameters: {self}")

    def margin(self, lambda_sea: float) -> float:
        """rho, which grows with the uncertainty allowance."""
        return (self.eta_R + lambda_sea) * self.ts


@dataclass(frozen=True)
class SafeControlSet:
    """The controls u with L @ u <= S; S is +inf when the index is negative."""

    L: np.ndarray
    S: float
    phi_value: float
    lambda_sea: float

    def contains(self, u, tol: float = _FEAS_TOL) -> bool:
        return bool(np.isinf(self.S) or self.L @ np.asarray(u, dtype=float) <= self.S + tol)


def _relative(env: EnvState):
    dp = env.robot.pos - env.human.pos
    dv = env.robot.vel - env.human.vel
    d = float(np.linalg.norm(dp))
    if d == 0.0:
        raise GeometryError(f"robot and human coincide at step {env.k}")
    return dp, dv, d


def phi(params: SafetyIndexParams, env: EnvState, lambda_sea: float | None = None) -> tuple[float, float]:
    """Safety index and the raw distance constraint phi0 = d_min - d."""
    dp, dv, d = _relative(env)
    d_dot = float(dp @ dv) / d
    lam = params.lambda_0 if lambda_sea is None else lambda_sea
    value = params.d_min**2 + params.margin(lam) - d**2 - params.k_phi * d_dot
    return value, params.d_min - d


def phi_gradients(params: SafetyIndexParams, env: EnvState) -> tuple[np.ndarray, np.ndarray]:
    """Analytic d(phi)/d(x_R) and d(phi)/d(x_H), each a 4-vector over (pos, vel)."""
    dp, dv, d = _relative(env)
    d_dot = float(dp @ dv) / d
    grad_pos = -2.0 * dp - params.k_phi * (dv / d - d_dot * dp / d**2)
    grad_vel = -params.k_phi * dp / d
    g_R = np.concatenate([grad_pos, grad_vel])
    return g_R, -g_R


def uncertainty_allowance(params: SafetyIndexParams, grad_H: np.ndarray, sigma_H: np.ndarray) -> float:
    """lambda_SEA: three standard deviations of the human part of phi_dot, plus lambda_0."""
    var = max(float(grad_H @ sigma_H @ grad_H), 0.0)
    return 3.0 / params.ts * np.sqrt(var) + params.lambda_0


def safe_control_set(
    params: SafetyIndexParams,
    env: EnvState,
    prediction: Prediction,
    dyn: RobotDynamics,
    lambda_sea_prev: float | None = None,
) -> SafeControlSet:
    """Half-space of safe robot controls for the current step.

    The margin inside phi uses the previous step's allowance (``lambda_sea_prev``)
    to avoid a fixed point; the constraint itself uses the current one.
    """
    g_R, g_H = phi_gradients(params, env)
    value, _ = phi(params, env, lambda_sea_prev)
    lam = uncertainty_allowance(params, g_H, prediction.sigma_H_next)
    ts = dyn.ts
    L = g_R @ dyn.input_matrix / ts
    if value < 0:
        return SafeControlSet(L, np.inf, value, lam)
    x_R = env.robot.as_vector()
    robot_drift_rate = (dyn.drift_matrix @ x_R - x_R) / ts
    human_rate = (prediction.x_hat_next - env.human.as_vector()) / ts
    S = -params.eta_R - lam - float(g_H @ human_rate) - float(g_R @ robot_drift_rate)
    return SafeControlSet(L, S, value, lam)


def _qp_candidates(L, S, u_ref, lo, hi):
    yield np.clip(u_ref, lo, hi)
    nn = float(L @ L)
    if nn > 0:
        yield u_ref - (float(L @ u_ref) - S) / nn * L
    for i, j in ((0, 1), (1, 0)):
        for bound in (lo[i], hi[i]):
            face = np.empty(2)
            face[i] = bound
            face[j] = np.clip(u_ref[j], lo[j], hi[j])
            yield face
            if abs(L[j]) > 1e-12 * max(abs(L[i]), 1e-300):
                cross = np.empty(2)
                cross[i] = bound
                cross[j] = (S - L[i] * bound) / L[j]
                yield cross
    for corner in itertools.product((lo[0], hi[0]), (lo[1], hi[1])):
        yield np.array(corner)


def project(L, S: float, u_ref, lo, hi) -> tuple[np.ndarray, bool]:
    """Closest point to ``u_ref`` in {lo <= u <= hi, L u <= S}.

    Enumerates every KKT active set of the 2D problem. Returns ``(u, feasible)``;
    when the half-space misses the box entirely, the box point with the least
    violation is returned with ``feasible=False``.
    """
    L = np.asarray(L, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.isinf(S):
        return np.clip(u_ref, lo, hi), True
    tol = _FEAS_TOL * max(1.0, abs(S))
    best, best_dist = None, np.inf
    for cand in _qp_candidates(L, S, u_ref, lo, hi):
        if np.any(cand < lo - tol) or np.any(cand > hi + tol) or L @ cand > S + tol:
            continue
        cand = np.clip(cand, lo, hi)
        dist = float(np.sum((cand - u_ref) ** 2))
        if dist < best_dist:
            best, best_dist = cand, dist
    if best is None:
        least = np.where(L > 0, lo, np.where(L < 0, hi, np.clip(u_ref, lo, hi)))
        return least, False
    return best, True


def monitor(cset: SafeControlSet, u_ref, bounds: tuple) -> tuple[np.ndarray, bool, bool]:
    """Project a reference control onto the safe set within the box ``bounds = (lo, hi)``.

    Returns ``(u_safe, intervened, infeasible)``.
    """
    u_ref = np.asarray(u_ref, dtype=float)
    if not np.all(np.isfinite(u_ref)):
        raise ValueError(f"reference control is not finite: {u_ref}")
    u, feasible = project(cset.L, cset.S, u_ref, *bounds)
    intervened = bool(np.linalg.norm(u - u_ref) > INTERVENTION_TOL)
    return u, intervened, not feasible


def realized_phi_rate(params: SafetyIndexParams, env: EnvState, robot_next, human_next, ts: float) -> float:
    """Linearized phi_dot over one step, from the states actually reached.

    On a safety-active step the monitor certifies this stays at or below
    ``-eta_R`` with 3-sigma confidence, so exceedances measure calibration.
    """
    g_R, g_H = phi_gradients(params, env)
    dx_R = np.asarray(robot_next, dtype=float) - env.robot.as_vector()
    dx_H = np.asarray(human_next, dtype=float) - env.human.as_vector()
    return float(g_R @ dx_R + g_H @ dx_H) / ts
