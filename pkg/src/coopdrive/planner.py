"""Distributed longitudinal trajectory planning by consensus ADMM.

Each vehicle runs a dual agent that exchanges its consensus vector over the
V2X bus once per iteration, recovers its own control sequence from a small
constrained QP, and projects the cone copy onto the nonpositive orthant. A
centralized one-shot QP over all vehicles doubles as the testing oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bus import SyncBus
from .dynamics import build_prediction_matrices, discretize_lag, PredictionMatrices
from .params import Params
from .qp import QpError, QpProblem, QpSettings, QpSolver, WarmStart
from .scenario import (
    MergeSchedule,
    ScenarioConfig,
    assign_merge_order,
    avg_speed_bounds,
    map_to_2d,
    terminal_bounds,
)


class PlannerError(RuntimeError):
    def __init__(self, message, variance_history=None):
        super().__init__(message)
        self.variance_history = variance_history or []


class PlannerInfeasible(PlannerError):
    pass


@dataclass
class PlannerConfig:
    iterations: int = 33
    schedule: list[list[float]] = field(default_factory=lambda: Params().admm_schedule)
    consensus_tol: float = 1e-5
    qp_settings: QpSettings = field(
        default_factory=lambda: QpSettings(eps_abs=1e-6, eps_rel=1e-6, max_iter=20000)
    )

    def rho_sigma_at(self, iteration: int) -> tuple[float, float]:
        """Step sizes for a 1-based iteration; the last phase extends forever."""
        rho, sigma = self.schedule[-1][2], self.schedule[-1][3]
        for lo, hi, r, s in self.schedule:
            if lo <= iteration <= hi:
                return float(r), float(s)
        return float(rho), float(sigma)


@dataclass
class CouplingData:
    """Safety-coupling blocks of one vehicle: G, H and their condensed A, b."""

    G: np.ndarray  # (N*T, 3T)
    H: np.ndarray  # (N*T,)
    A: np.ndarray  # (N*T, T)
    b: np.ndarray  # (N*T,)
    degree: int


def build_coupling(
    schedule: MergeSchedule,
    pred: PredictionMatrices,
    x0: np.ndarray,
    vehicle: int,
    order: list[int],
    params: Params,
) -> CouplingData:
    """Coupling data of `vehicle` against the shared merge schedule.

    Row (block j, step k) encodes s_front - s_j - d_S1 >= 0 for vehicle j's
    active front at step k; rows without an active front (the platoon leader,
    or a lane leader before its merge step) stay identically zero.
    """
    T = pred.horizon
    n = len(order)
    index = {vid: i for i, vid in enumerate(order)}
    G = np.zeros((n * T, 3 * T))
    H = np.zeros(n * T)
    for m in order:
        j = index[m]
        for k in range(1, T + 1):
            front = schedule.front_at(m, k)
            if front is None:
                continue
            row = j * T + (k - 1)
            col = 3 * (k - 1)
            if m == vehicle:
                G[row, col] = -1.0
                H[row] = params.d_S1
            if front == vehicle:
                G[row, col] = 1.0
    A = G @ pred.Lambda
    b = H - G @ (pred.Gamma @ np.asarray(x0, dtype=float))
    return CouplingData(G=G, H=H, A=A, b=b, degree=n - 1)


def selector_matrix(t_m: int, params: Params) -> np.ndarray:
    """Two-row selector: terminal position and the pre-merge speed sum."""
    T = params.T_P1
    M = np.zeros((2, 3 * T))
    M[0, 3 * (T - 1)] = 1.0
    for k in range(1, t_m + 1):
        M[1, 3 * (k - 1) + 1] = 1.0
    return M


@dataclass
class DualAgentState:
    """Per-vehicle ADMM state; owned exclusively by that vehicle's worker."""

    vehicle_id: int
    coupling: CouplingData
    y: np.ndarray
    p: np.ndarray
    s: np.ndarray
    z: np.ndarray
    r: np.ndarray
    U: np.ndarray
    solver: QpSolver
    constraint_A: np.ndarray
    bound_l: np.ndarray
    bound_u: np.ndarray
    qp_dual: np.ndarray | None = None
    qp_penalty: float | None = None  # the sigma + 2 rho d the cached P was built with


def make_dual_agent(
    vehicle_id: int,
    schedule: MergeSchedule,
    pred: PredictionMatrices,
    x0: np.ndarray,
    s0: float,
    order: list[int],
    params: Params,
    qp_settings: QpSettings,
) -> DualAgentState:
    T = params.T_P1
    coupling = build_coupling(schedule, pred, x0, vehicle_id, order, params)
    M_X = selector_matrix(schedule.t_M[vehicle_id], params)
    term_lo, term_hi = terminal_bounds(schedule, params, vehicle_id)
    avg_lo, avg_hi = avg_speed_bounds(s0, params)
    free = M_X @ (pred.Gamma @ np.asarray(x0, dtype=float))
    constraint_A = np.vstack([np.eye(T), M_X @ pred.Lambda])
    bound_l = np.concatenate([np.full(T, -params.a_max), [term_lo, avg_lo] - free])
    bound_u = np.concatenate([np.full(T, params.a_max), [term_hi, avg_hi] - free])
    dim = len(order) * T
    return DualAgentState(
        vehicle_id=vehicle_id,
        coupling=coupling,
        y=np.zeros(dim),
        p=np.zeros(dim),
        s=np.zeros(dim),
        z=np.zeros(dim),
        r=np.zeros(dim),
        U=np.zeros(T),
        solver=QpSolver(qp_settings),
        constraint_A=constraint_A,
        bound_l=bound_l,
        bound_u=bound_u,
    )


def consensus_variance(ys: list[np.ndarray]) -> float:
    """Sum of squared deviations of the agents' consensus vectors from their mean."""
    stack = np.stack(ys)
    mean = stack.mean(axis=0)
    return float(((stack - mean) ** 2).sum())


def admm_iteration(
    agents: list[DualAgentState], bus: SyncBus, rho: float, sigma: float
) -> None:
    """One synchronized consensus round: exchange y, then update every agent."""
    round_idx = bus.round_index
    for ag in agents:
        bus.broadcast(ag.vehicle_id, round_idx, "dual_vector", {"y": ag.y})
    received = {
        ag.vehicle_id: [m.decode()["y"] for m in bus.receive_all(ag.vehicle_id, round_idx)]
        for ag in agents
    }
    bus.advance_round()

    for ag in agents:
        peers = received[ag.vehicle_id]
        if peers:
            peer_sum = np.sum(peers, axis=0)
            n_peers = len(peers)
        else:
            peer_sum = np.zeros_like(ag.y)
            n_peers = 0
        ag.p = ag.p + rho * (n_peers * ag.y - peer_sum)
        ag.s = ag.s + sigma * (ag.y - ag.z)
        ag.r = sigma * ag.z + rho * (n_peers * ag.y + peer_sum) - (ag.coupling.b + ag.p + ag.s)
        penalty = sigma + 2.0 * rho * ag.coupling.degree
        q = (ag.coupling.A.T @ ag.r) / penalty
        warm = WarmStart(x0=ag.U, y0=ag.qp_dual) if ag.qp_dual is not None else None
        try:
            if ag.qp_penalty != penalty:
                P = 2.0 * np.eye(len(ag.U)) + (ag.coupling.A.T @ ag.coupling.A) / penalty
                problem = QpProblem(P, q, ag.constraint_A, ag.bound_l, ag.bound_u)
                sol = ag.solver.solve(problem, warm=warm)
                ag.qp_penalty = penalty
            else:
                sol = ag.solver.resolve_with_updates(q=q, warm=warm)
        except (QpError, ValueError) as exc:
            raise PlannerError(
                f"agent {ag.vehicle_id} QP failed at bus round {round_idx}: {exc}"
            ) from exc
        if sol.status == "primal_infeasible":
            raise PlannerInfeasible(
                f"agent {ag.vehicle_id} local constraints infeasible (round {round_idx})"
            )
        ag.U = sol.x
        ag.qp_dual = sol.y
        ag.y = (ag.coupling.A @ ag.U + ag.r) / penalty
        ag.z = np.minimum(ag.y + ag.s / sigma, 0.0)


@dataclass
class PlanResult:
    """Planner output: controls, state rollouts, and 2-D references per vehicle."""

    order: list[int]
    U: dict[int, np.ndarray]
    X: dict[int, np.ndarray]
    s: dict[int, np.ndarray]
    references: dict[int, np.ndarray]
    variance_history: list[float]
    snapshots: dict[int, dict[int, np.ndarray]]
    iterations: int
    objective: float
    t_M: dict[int, int]
    terminal_slots: dict[int, tuple[float, float]]


def _states_from_controls(pred, x0, U):
    X = pred.Gamma @ x0 + pred.Lambda @ U
    return X


def _reference_from_s(s_seq, curve, params: Params) -> np.ndarray:
    """2-D reference over the planned horizon plus a constant-speed extension."""
    v_end = max((s_seq[-1] - s_seq[-2]) / params.T_s, 0.0) if len(s_seq) > 1 else 0.0
    tail = s_seq[-1] + v_end * params.T_s * np.arange(1, params.T_P2 + 1)
    tail = np.minimum(tail, curve.length)
    s_full = np.concatenate([s_seq, tail])
    s_full = np.maximum.accumulate(np.clip(s_full, 0.0, curve.length))
    return map_to_2d(s_full, curve, params.T_s)


def plan_distributed(
    scenario: ScenarioConfig,
    config: PlannerConfig | None = None,
    bus: SyncBus | None = None,
    snapshot_iterations: tuple[int, ...] = (),
) -> PlanResult:
    """Run the full distributed planning loop (coordinate round + ADMM rounds)."""
    if scenario.kind != "ramp":
        raise PlannerError(f"longitudinal planning applies to ramp scenarios, not {scenario.kind!r}")
    config = config or PlannerConfig()
    params = scenario.params
    bus = bus or SyncBus()
    order = sorted(v.id for v in scenario.vehicles)
    specs = {v.id: v for v in scenario.vehicles}
    for vid in order:
        bus.register(vid)

    # coordinate exchange: every agent learns all spawn states and derives the
    # same merge schedule locally
    for vid in order:
        v = specs[vid]
        bus.broadcast(vid, bus.round_index, "coordinate", {"id": vid, "lane": v.lane, "s0": v.s0, "v0": v.v0})
    for vid in order:
        bus.receive_all(vid, bus.round_index)
    bus.advance_round()
    schedule = assign_merge_order(scenario.vehicles, params)

    lag = discretize_lag(params.T_l, params.T_s)
    pred = build_prediction_matrices(lag, params.T_P1)
    agents = [
        make_dual_agent(
            vid, schedule, pred, np.array([specs[vid].s0, specs[vid].v0, 0.0]), specs[vid].s0,
            order, params, config.qp_settings,
        )
        for vid in order
    ]

    x0 = {vid: np.array([specs[vid].s0, specs[vid].v0, 0.0]) for vid in order}
    variance_history: list[float] = []
    snapshots: dict[int, dict[int, np.ndarray]] = {}
    snapshot_set = set(snapshot_iterations)
    for it in range(1, config.iterations + 1):
        rho, sigma = config.rho_sigma_at(it)
        admm_iteration(agents, bus, rho, sigma)
        ys = [ag.y for ag in agents]
        if not all(np.isfinite(y).all() for y in ys):
            raise PlannerError(
                f"non-finite consensus iterate at iteration {it}", variance_history
            )
        variance_history.append(consensus_variance(ys))
        if it in snapshot_set:
            snapshots[it] = {
                ag.vehicle_id: np.concatenate(
                    [[x0[ag.vehicle_id][0]],
                     _states_from_controls(pred, x0[ag.vehicle_id], ag.U)[0::3]]
                )
                for ag in agents
            }

    curves = scenario.lane_curves()
    U = {ag.vehicle_id: ag.U.copy() for ag in agents}
    X = {vid: _states_from_controls(pred, x0[vid], U[vid]) for vid in order}
    s = {vid: np.concatenate([[x0[vid][0]], X[vid][0::3]]) for vid in order}
    references = {vid: _reference_from_s(s[vid], curves[vid], params) for vid in order}
    return PlanResult(
        order=order,
        U=U,
        X=X,
        s=s,
        references=references,
        variance_history=variance_history,
        snapshots=snapshots,
        iterations=config.iterations,
        objective=float(sum(u @ u for u in U.values())),
        t_M=dict(schedule.t_M),
        terminal_slots={vid: terminal_bounds(schedule, params, vid) for vid in order},
    )


def plan_centralized(
    scenario: ScenarioConfig, qp_settings: QpSettings | None = None
) -> PlanResult:
    """One-shot QP over all vehicles; the independent optimality oracle."""
    if scenario.kind != "ramp":
        raise PlannerError(f"longitudinal planning applies to ramp scenarios, not {scenario.kind!r}")
    params = scenario.params
    qp_settings = qp_settings or QpSettings(eps_abs=1e-6, eps_rel=1e-8, max_iter=100000)
    order = sorted(v.id for v in scenario.vehicles)
    specs = {v.id: v for v in scenario.vehicles}
    schedule = assign_merge_order(scenario.vehicles, params)
    lag = discretize_lag(params.T_l, params.T_s)
    pred = build_prediction_matrices(lag, params.T_P1)
    T = params.T_P1
    n = len(order)
    x0 = {vid: np.array([specs[vid].s0, specs[vid].v0, 0.0]) for vid in order}

    coupling = {
        vid: build_coupling(schedule, pred, x0[vid], vid, order, params) for vid in order
    }
    rows_A: list[np.ndarray] = []
    rows_l: list[np.ndarray] = []
    rows_u: list[np.ndarray] = []
    row_class: list[str] = []

    # box bounds per vehicle
    box = np.eye(n * T)
    rows_A.append(box)
    rows_l.append(np.full(n * T, -params.a_max))
    rows_u.append(np.full(n * T, params.a_max))
    row_class.extend(["control_bounds"] * (n * T))

    # terminal slot and pre-merge speed-sum windows
    for i, vid in enumerate(order):
        M_X = selector_matrix(schedule.t_M[vid], params)
        block = np.zeros((2, n * T))
        block[:, i * T : (i + 1) * T] = M_X @ pred.Lambda
        free = M_X @ (pred.Gamma @ x0[vid])
        term = terminal_bounds(schedule, params, vid)
        avg = avg_speed_bounds(specs[vid].s0, params)
        rows_A.append(block)
        rows_l.append(np.array([term[0], avg[0]]) - free)
        rows_u.append(np.array([term[1], avg[1]]) - free)
        row_class.extend(["terminal_window", "average_speed"])

    # coupled safety rows: sum_i (A_i U_i - b_i) >= 0, zero rows dropped
    A_cat = np.zeros((n * T, n * T))
    b_cat = np.zeros(n * T)
    for i, vid in enumerate(order):
        A_cat[:, i * T : (i + 1) * T] = coupling[vid].A
        b_cat += coupling[vid].b
    active = np.abs(A_cat).max(axis=1) > 0
    rows_A.append(A_cat[active])
    rows_l.append(b_cat[active])
    rows_u.append(np.full(int(active.sum()), np.inf))
    row_class.extend(["safety_gap"] * int(active.sum()))

    A_all = np.vstack(rows_A)
    l_all = np.concatenate(rows_l)
    u_all = np.concatenate(rows_u)
    problem = QpProblem(2.0 * np.eye(n * T), np.zeros(n * T), A_all, l_all, u_all)
    sol = QpSolver(qp_settings).solve(problem)
    if sol.status == "primal_infeasible":
        residual_l = l_all - A_all @ sol.x
        worst = int(np.argmax(residual_l))
        raise PlannerInfeasible(
            f"centralized planning infeasible; most violated class: {row_class[worst]}"
        )
    if sol.status != "solved":
        raise PlannerError(f"centralized QP did not converge (status {sol.status})")

    curves = scenario.lane_curves()
    U = {vid: sol.x[i * T : (i + 1) * T].copy() for i, vid in enumerate(order)}
    X = {vid: _states_from_controls(pred, x0[vid], U[vid]) for vid in order}
    s = {vid: np.concatenate([[x0[vid][0]], X[vid][0::3]]) for vid in order}
    references = {vid: _reference_from_s(s[vid], curves[vid], params) for vid in order}
    return PlanResult(
        order=order,
        U=U,
        X=X,
        s=s,
        references=references,
        variance_history=[],
        snapshots={},
        iterations=1,
        objective=float(sum(u @ u for u in U.values())),
        t_M=dict(schedule.t_M),
        terminal_slots={vid: terminal_bounds(schedule, params, vid) for vid in order},
    )


def planned_gap_residuals(result: PlanResult, scenario: ScenarioConfig) -> list[float]:
    """Per constrained (vehicle, step): s_front - s_self - d_S1 from the plan."""
    params = scenario.params
    schedule = assign_merge_order(scenario.vehicles, params)
    residuals = []
    for vid in result.order:
        for k in range(1, params.T_P1 + 1):
            front = schedule.front_at(vid, k)
            if front is None:
                continue
            residuals.append(result.s[front][k] - result.s[vid][k] - params.d_S1)
    return residuals
