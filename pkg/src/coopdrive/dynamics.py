"""Vehicle models: longitudinal lag dynamics for planning, kinematic bicycle
for control, plus their discretizations, linearizations, and horizon-stacked
prediction matrices.

Everything here is a pure function of its inputs; returned arrays are never
mutated afterwards and are safe to share between agents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm


@dataclass(frozen=True)
class LongitudinalState:
    """Longitudinal position (m), speed (m/s), acceleration (m/s^2)."""

    s: float
    v: float
    a: float = 0.0

    @property
    def array(self) -> np.ndarray:
        return np.array([self.s, self.v, self.a], dtype=float)


@dataclass(frozen=True)
class BicycleState:
    """Planar pose and speed: lateral x, longitudinal y, heading phi, speed v.

    Heading is stored unwrapped; no modular reduction is ever applied inside a
    horizon, so weighted differences across the +-pi seam stay meaningful.
    """

    x: float
    y: float
    phi: float
    v: float

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi, self.v], dtype=float)


@dataclass(frozen=True)
class BicycleControl:
    """Acceleration (m/s^2) and front-wheel steering angle (rad)."""

    a: float
    psi: float

    @property
    def array(self) -> np.ndarray:
        return np.array([self.a, self.psi], dtype=float)


@dataclass(frozen=True)
class LagModel:
    """Exact ZOH discretization of the first-order-lag longitudinal model."""

    T_l: float
    T_s: float
    A_bar: np.ndarray  # 3x3
    B_bar: np.ndarray  # 3x1


@dataclass(frozen=True)
class PredictionMatrices:
    """Stacked predictors: X = Gamma x0 + Lambda U over the planning horizon."""

    Gamma: np.ndarray  # (3T, 3)
    Lambda: np.ndarray  # (3T, T)
    horizon: int


@dataclass(frozen=True)
class LinearizedStep:
    """One-step affine model X+ ~ A X + B U + G around a nominal point."""

    A: np.ndarray  # 4x4
    B: np.ndarray  # 4x2
    G: np.ndarray  # (4,)


@dataclass(frozen=True)
class StackedLinearDynamics:
    """Condensed time-varying prediction: X = A_stack x0 + B_stack U + G_stack."""

    A_stack: np.ndarray  # (4T, 4)
    B_stack: np.ndarray  # (4T, 2T)
    G_stack: np.ndarray  # (4T,)
    horizon: int


def lag_continuous(T_l: float) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time (A, B) of the longitudinal lag model."""
    if T_l <= 0:
        raise ValueError("lag time constant must be positive")
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0 / T_l]])
    B = np.array([[0.0], [0.0], [1.0 / T_l]])
    return A, B


def discretize_lag(T_l: float, T_s: float) -> LagModel:
    """Exact zero-order-hold discretization via the augmented matrix exponential.

    expm([[A, B], [0, 0]] * T_s) carries (A_bar, B_bar) in its top block row.
    """
    if T_l <= 0:
        raise ValueError("lag time constant must be positive")
    if T_s < 0:
        raise ValueError("sampling interval must be nonnegative")
    A, B = lag_continuous(T_l)
    M = np.zeros((4, 4))
    M[:3, :3] = A
    M[:3, 3:] = B
    E = expm(M * T_s)
    return LagModel(T_l=T_l, T_s=T_s, A_bar=E[:3, :3].copy(), B_bar=E[:3, 3:].copy())


def build_prediction_matrices(model: LagModel, horizon: int) -> PredictionMatrices:
    """Gamma / Lambda stacking of the discrete lag model over `horizon` steps."""
    if horizon < 1:
        raise ValueError("horizon must be at least one step")
    n = 3
    A, B = model.A_bar, model.B_bar
    Gamma = np.zeros((n * horizon, n))
    Lam = np.zeros((n * horizon, horizon))
    powers = [np.eye(n)]
    for _ in range(horizon):
        powers.append(A @ powers[-1])
    for r in range(horizon):
        Gamma[n * r : n * (r + 1), :] = powers[r + 1]
        for c in range(r + 1):
            Lam[n * r : n * (r + 1), c : c + 1] = powers[r - c] @ B
    return PredictionMatrices(Gamma=Gamma, Lambda=Lam, horizon=horizon)


def _slip_angle(psi: float) -> float:
    return math.atan(0.5 * math.tan(psi))


def _check_steering(psi: float) -> None:
    if not abs(psi) < math.pi / 2:
        raise ValueError(f"steering angle {psi!r} at or beyond the tangent singularity")


def bicycle_derivative(X: np.ndarray, U: np.ndarray, L_V: float) -> np.ndarray:
    """Kinematic bicycle derivative for state [x, y, phi, v], input [a, psi].

    The reference point is the body center, hence the 0.5 factors on both the
    slip angle and the yaw-rate lever arm.
    """
    if L_V <= 0:
        raise ValueError("vehicle length must be positive")
    x, y, phi, v = X
    a, psi = U
    _check_steering(psi)
    beta = _slip_angle(psi)
    return np.array(
        [
            v * math.cos(phi + beta),
            v * math.sin(phi + beta),
            v * math.sin(beta) / (0.5 * L_V),
            a,
        ]
    )


def bicycle_step(X: np.ndarray, U: np.ndarray, T_s: float, L_V: float) -> np.ndarray:
    """Forward-Euler step of the bicycle model."""
    return np.asarray(X, dtype=float) + T_s * bicycle_derivative(X, U, L_V)


def bicycle_jacobians(X: np.ndarray, U: np.ndarray, L_V: float) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians (d_f/d_X, d_f/d_U) of the bicycle derivative."""
    if L_V <= 0:
        raise ValueError("vehicle length must be positive")
    _, _, phi, v = X
    _, psi = U
    _check_steering(psi)
    beta = _slip_angle(psi)
    c, s = math.cos(phi + beta), math.sin(phi + beta)
    # d beta / d psi, from beta = atan(0.5 tan psi)
    t = math.tan(psi)
    dbeta = 0.5 * (1.0 + t * t) / (1.0 + 0.25 * t * t)
    J_X = np.array(
        [
            [0.0, 0.0, -v * s, c],
            [0.0, 0.0, v * c, s],
            [0.0, 0.0, 0.0, math.sin(beta) / (0.5 * L_V)],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )
    J_U = np.array(
        [
            [0.0, -v * s * dbeta],
            [0.0, v * c * dbeta],
            [0.0, v * math.cos(beta) * dbeta / (0.5 * L_V)],
            [1.0, 0.0],
        ]
    )
    return J_X, J_U


def linearize_bicycle(X_bar: np.ndarray, U_bar: np.ndarray, T_s: float, L_V: float) -> LinearizedStep:
    """First-order model of the Euler step around (X_bar, U_bar).

    Exact at the linearization point: A X_bar + B U_bar + G reproduces
    bicycle_step(X_bar, U_bar) to machine precision.
    """
    X_bar = np.asarray(X_bar, dtype=float)
    U_bar = np.asarray(U_bar, dtype=float)
    J_X, J_U = bicycle_jacobians(X_bar, U_bar, L_V)
    f = bicycle_derivative(X_bar, U_bar, L_V)
    A = T_s * J_X + np.eye(4)
    B = T_s * J_U
    G = T_s * (f - J_X @ X_bar - J_U @ U_bar)
    return LinearizedStep(A=A, B=B, G=G)


def stack_linear_dynamics(steps: list[LinearizedStep]) -> StackedLinearDynamics:
    """Condense per-step affine models into one-shot prediction matrices.

    Row r predicts the state after r+1 steps; blocks follow the recursion
    row[r] = A_r row[r-1] (+ B_r / G_r terms), matching a sequential rollout.
    """
    if not steps:
        raise ValueError("at least one linearized step is required")
    T = len(steps)
    nx, nu = 4, 2
    A_stack = np.zeros((nx * T, nx))
    B_stack = np.zeros((nx * T, nu * T))
    G_stack = np.zeros(nx * T)
    A_prev = np.eye(nx)
    for r, step in enumerate(steps):
        rows = slice(nx * r, nx * (r + 1))
        A_stack[rows] = step.A @ A_prev
        if r > 0:
            prev = slice(nx * (r - 1), nx * r)
            B_stack[rows, : nu * r] = step.A @ B_stack[prev, : nu * r]
            G_stack[rows] = step.A @ G_stack[prev] + step.G
        else:
            G_stack[rows] = step.G
        B_stack[rows, nu * r : nu * (r + 1)] = step.B
        A_prev = A_stack[rows]
    return StackedLinearDynamics(A_stack=A_stack, B_stack=B_stack, G_stack=G_stack, horizon=T)


def rollout_bicycle(x0: np.ndarray, controls: np.ndarray, T_s: float, L_V: float) -> np.ndarray:
    """Euler rollout of a (T, 2) control sequence; returns the (T, 4) states."""
    controls = np.asarray(controls, dtype=float)
    out = np.zeros((len(controls), 4))
    x = np.asarray(x0, dtype=float)
    for i, u in enumerate(controls):
        x = bicycle_step(x, u, T_s, L_V)
        out[i] = x
    return out
