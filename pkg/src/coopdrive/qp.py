"""Embedded operator-splitting QP solver.

Solves  min 0.5 x'Px + q'x  s.t.  l <= Ax <= u  by ADMM on the split
(x, z = Ax), with Ruiz equilibration, a cached KKT factorization, residual
balancing of the step size every `adaptive_rho_interval` iterations, and warm
starting of both the primal and dual iterates. Iteration counts are always
reported; given identical inputs and settings the solver is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve

RHO_MIN, RHO_MAX = 1e-6, 1e6
RHO_EQ_SCALE = 1e3  # stiffer step on rows with l == u


class QpError(RuntimeError):
    pass


@dataclass
class QpSettings:
    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    relaxation: float = 1.6
    adaptive_rho_interval: int = 25
    scaling_iters: int = 10
    eps_infeasible: float = 1e-6


@dataclass(frozen=True)
class WarmStart:
    x0: np.ndarray
    y0: np.ndarray | None = None


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str  # solved | max_iter | primal_infeasible
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float


class QpProblem:
    """Problem data with shape/symmetry/bound validation."""

    def __init__(self, P: np.ndarray, q: np.ndarray, A: np.ndarray, l: np.ndarray, u: np.ndarray):
        P = np.asarray(P, dtype=float)
        q = np.asarray(q, dtype=float).ravel()
        A = np.asarray(A, dtype=float)
        l = np.asarray(l, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        n = q.shape[0]
        if P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {P.shape}")
        if A.ndim != 2 or A.shape[1] != n:
            raise ValueError(f"A must have {n} columns, got {A.shape}")
        m = A.shape[0]
        if l.shape != (m,) or u.shape != (m,):
            raise ValueError("bound vectors must match the number of constraint rows")
        asym = np.abs(P - P.T).max(initial=0.0)
        scale = max(np.abs(P).max(initial=0.0), 1.0)
        if asym > 1e-10 * scale:
            raise ValueError(f"P is not symmetric (max asymmetry {asym:.3e})")
        if np.any(l > u):
            raise ValueError("lower bounds exceed upper bounds")
        self.P = 0.5 * (P + P.T)
        self.q = q
        self.A = A
        self.l = l
        self.u = u
        self.n = n
        self.m = m


def _check_psd(P: np.ndarray) -> None:
    shift = 1e-9 * max(np.abs(np.diag(P)).max(initial=0.0), 1.0)
    try:
        np.linalg.cholesky(P + shift * np.eye(P.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise QpError("quadratic term is not positive semidefinite") from exc


def _ruiz_equilibrate(P, q, A, iters):
    """Modified Ruiz scaling of [[P, A'], [A, 0]] plus cost normalization."""
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    Ps, qs, As = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        col_p = np.abs(Ps).max(axis=0, initial=0.0)
        col_a = np.abs(As).max(axis=0, initial=0.0) if m else np.zeros(n)
        col = np.maximum(col_p, col_a)
        dn = np.where(col > 1e-10, np.sqrt(np.maximum(col, 1e-10)), 1.0)
        row_a = np.abs(As).max(axis=1, initial=0.0) if m else np.zeros(0)
        de = np.where(row_a > 1e-10, np.sqrt(np.maximum(row_a, 1e-10)), 1.0)
        D /= dn
        E /= de
        Ps = Ps / dn[:, None] / dn[None, :]
        qs = qs / dn
        if m:
            As = As / de[:, None] / dn[None, :]
        # cost scaling
        mean_col = np.abs(Ps).max(axis=0, initial=0.0).mean() if n else 1.0
        gamma = 1.0 / max(mean_col, np.abs(qs).max(initial=0.0), 1e-8)
        Ps *= gamma
        qs *= gamma
        c *= gamma
    return Ps, qs, As, D, E, c


class QpSolver:
    """A single-threaded solver instance; safe to run one per agent.

    The scaled matrices, step sizes, and KKT factorization persist across
    `resolve_with_updates` calls so repeated solves with fresh linear terms or
    bounds (the MPC/planner pattern) skip the setup cost.
    """

    def __init__(self, settings: QpSettings | None = None):
        self.settings = settings or QpSettings()
        self._setup_done = False

    # -- setup -----------------------------------------------------------

    def setup(self, problem: QpProblem) -> None:
        s = self.settings
        _check_psd(problem.P)
        self.problem = problem
        if s.scaling_iters > 0:
            Ps, qs, As, D, E, c = _ruiz_equilibrate(problem.P, problem.q, problem.A, s.scaling_iters)
        else:
            Ps, qs, As = problem.P.copy(), problem.q.copy(), problem.A.copy()
            D, E, c = np.ones(problem.n), np.ones(problem.m), 1.0
        self.Ps, self.qs, self.As = Ps, qs, As
        self.D, self.E, self.c = D, E, c
        self.ls = E * problem.l
        self.us = E * problem.u
        self.rho_vec = np.full(problem.m, s.rho)
        eq_rows = np.isfinite(self.ls) & np.isclose(self.ls, self.us)
        self.rho_vec[eq_rows] *= RHO_EQ_SCALE
        self._factorize()
        self._setup_done = True

    def _factorize(self) -> None:
        n, m = self.problem.n, self.problem.m
        K = np.zeros((n + m, n + m))
        K[:n, :n] = self.Ps + self.settings.sigma * np.eye(n)
        if m:
            K[:n, n:] = self.As.T
            K[n:, :n] = self.As
            K[n:, n:] = -np.diag(1.0 / self.rho_vec)
        try:
            self._kkt = lu_factor(K)
        except Exception as exc:  # singular KKT implies unusable problem data
            raise QpError(f"KKT factorization failed: {exc}") from exc

    # -- public API ------------------------------------------------------

    def solve(self, problem: QpProblem, warm: WarmStart | None = None,
              settings: QpSettings | None = None) -> QpSolution:
        if settings is not None:
            self.settings = settings
        self.setup(problem)
        return self._iterate(warm)

    def resolve_with_updates(self, q: np.ndarray | None = None, l: np.ndarray | None = None,
                             u: np.ndarray | None = None, warm: WarmStart | None = None) -> QpSolution:
        """Re-solve after updating the linear term and/or bounds in place.

        The cached scaling and KKT factorization are reused; P and A must be
        unchanged (call `solve` otherwise).
        """
        if not self._setup_done:
            raise QpError("resolve_with_updates requires a prior solve")
        p = self.problem
        if q is not None:
            q = np.asarray(q, dtype=float).ravel()
            if q.shape != (p.n,):
                raise ValueError("updated q has the wrong dimension")
            p.q = q
            self.qs = self.c * self.D * q
        if l is not None or u is not None:
            new_l = p.l if l is None else np.asarray(l, dtype=float).ravel()
            new_u = p.u if u is None else np.asarray(u, dtype=float).ravel()
            if new_l.shape != (p.m,) or new_u.shape != (p.m,):
                raise ValueError("updated bounds have the wrong dimension")
            if np.any(new_l > new_u):
                raise ValueError("lower bounds exceed upper bounds")
            p.l, p.u = new_l, new_u
            self.ls, self.us = self.E * new_l, self.E * new_u
        return self._iterate(warm)

    # -- core loop ---------------------------------------------------------

    def _iterate(self, warm: WarmStart | None) -> QpSolution:
        s = self.settings
        p = self.problem
        n, m = p.n, p.m
        if warm is not None:
            x0 = np.asarray(warm.x0, dtype=float).ravel()
            if x0.shape != (n,):
                raise ValueError("warm-start primal has the wrong dimension")
            x = x0 / self.D
            if warm.y0 is not None:
                y0 = np.asarray(warm.y0, dtype=float).ravel()
                if y0.shape != (m,):
                    raise ValueError("warm-start dual has the wrong dimension")
                y = self.c * y0 / self.E if m else np.zeros(0)
            else:
                y = np.zeros(m)
            z = self.As @ x if m else np.zeros(0)
        else:
            x = np.zeros(n)
            y = np.zeros(m)
            z = np.zeros(m)

        rhs = np.empty(n + m)
        status = "max_iter"
        iterations = s.max_iter
        r_prim = r_dual = np.inf
        for k in range(1, s.max_iter + 1):
            rhs[:n] = s.sigma * x - self.qs
            if m:
                rhs[n:] = z - y / self.rho_vec
            sol = lu_solve(self._kkt, rhs)
            x_t = sol[:n]
            if m:
                z_t = z + (sol[n:] - y) / self.rho_vec
            else:
                z_t = z
            x = s.relaxation * x_t + (1.0 - s.relaxation) * x
            if m:
                z_pre = s.relaxation * z_t + (1.0 - s.relaxation) * z + y / self.rho_vec
                z_new = np.clip(z_pre, self.ls, self.us)
                dy = self.rho_vec * (z_pre - z_new)
                y_new = dy
                delta_y = y_new - y
                y, z = y_new, z_new
            else:
                delta_y = np.zeros(0)

            r_prim, r_dual, eps_prim, eps_dual = self._residuals(x, y, z)
            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = "solved"
                iterations = k
                break
            if m and self._primal_infeasible(delta_y):
                status = "primal_infeasible"
                iterations = k
                break
            if s.adaptive_rho_interval and k % s.adaptive_rho_interval == 0:
                self._adapt_rho(x, y, z)

        x_un = self.D * x
        y_un = (self.E * y / self.c) if m else np.zeros(0)
        objective = float(0.5 * x_un @ p.P @ x_un + p.q @ x_un)
        return QpSolution(
            x=x_un,
            y=y_un,
            status=status,
            iterations=iterations,
            primal_residual=r_prim,
            dual_residual=r_dual,
            objective=objective,
        )

    def _residuals(self, x, y, z):
        """Unscaled residuals and their tolerances."""
        p = self.problem
        s = self.settings
        x_un = self.D * x
        Ax = p.A @ x_un if p.m else np.zeros(0)
        z_un = z / self.E if p.m else np.zeros(0)
        y_un = (self.E * y / self.c) if p.m else np.zeros(0)
        r_prim = np.abs(Ax - z_un).max(initial=0.0)
        eps_prim = s.eps_abs + s.eps_rel * max(
            np.abs(Ax).max(initial=0.0), np.abs(z_un).max(initial=0.0)
        )
        Px = p.P @ x_un
        Aty = p.A.T @ y_un if p.m else np.zeros(p.n)
        r_dual = np.abs(Px + p.q + Aty).max(initial=0.0)
        eps_dual = s.eps_abs + s.eps_rel * max(
            np.abs(Px).max(initial=0.0), np.abs(Aty).max(initial=0.0), np.abs(p.q).max(initial=0.0)
        )
        return r_prim, r_dual, eps_prim, eps_dual

    def _adapt_rho(self, x, y, z) -> None:
        """Residual balancing; refactors only on a big enough step change."""
        p = self.problem
        if not p.m:
            return
        x_un = self.D * x
        Ax = p.A @ x_un
        z_un = z / self.E
        y_un = self.E * y / self.c
        Px = p.P @ x_un
        Aty = p.A.T @ y_un
        num = np.abs(Ax - z_un).max(initial=0.0) / max(
            np.abs(Ax).max(initial=0.0), np.abs(z_un).max(initial=0.0), 1e-12
        )
        den = np.abs(Px + p.q + Aty).max(initial=0.0) / max(
            np.abs(Px).max(initial=0.0), np.abs(Aty).max(initial=0.0),
            np.abs(p.q).max(initial=0.0), 1e-12,
        )
        if den <= 0 or num <= 0:
            return
        scale = np.sqrt(num / den)
        new_rho = np.clip(self.settings.rho * scale, RHO_MIN, RHO_MAX)
        if new_rho > 5.0 * self.settings.rho or new_rho < self.settings.rho / 5.0:
            self.settings = replace(self.settings, rho=float(new_rho))
            eq_rows = np.isfinite(self.ls) & np.isclose(self.ls, self.us)
            self.rho_vec = np.full(p.m, self.settings.rho)
            self.rho_vec[eq_rows] *= RHO_EQ_SCALE
            self._factorize()

    def _primal_infeasible(self, delta_y) -> bool:
        """Divergence certificate on the dual increment (best effort)."""
        p = self.problem
        s = self.settings
        dy_un = self.E * delta_y / self.c
        norm = np.abs(dy_un).max(initial=0.0)
        if norm <= 1e-14:
            return False
        dy = dy_un / norm
        if np.abs(p.A.T @ dy).max(initial=0.0) > s.eps_infeasible:
            return False
        pos = np.maximum(dy, 0.0)
        neg = np.minimum(dy, 0.0)
        support = np.where(pos > 0, p.u, 0.0) @ pos + np.where(neg < 0, p.l, 0.0) @ neg
        return bool(support < -s.eps_infeasible)


def solve_qp(problem: QpProblem, warm: WarmStart | None = None,
             settings: QpSettings | None = None) -> QpSolution:
    """One-shot convenience wrapper around a fresh solver instance."""
    return QpSolver(settings).solve(problem, warm)
