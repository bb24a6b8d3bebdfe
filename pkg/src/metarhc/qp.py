"""Finite-horizon constrained quadratic optimal control.

The kernel behind the receding-horizon step, the interval model/state
selection, and the full-horizon regret baseline. States are eliminated
through the linear dynamics (condensed, input-only QP) and the result is
solved by a primal active-set method with exact KKT certificates.
Condensing costs O(K^2) memory in the horizon K; at desk scale
(K <= ~1000, m <= 3) this is the simple and fast choice.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog

from metarhc.linsys import DimensionError


class QPError(RuntimeError):
    pass


@dataclass
class QuadCostSpec:
    """Time-indexed quadratic stage cost c_t(x, u) = x'Q_t x + u'R_t u.

    Q and R are the base matrices; an optional schedule(t) -> (Q_t, R_t)
    overrides them per step for time-varying cost sequences.
    """

    Q: np.ndarray
    R: np.ndarray
    schedule: Optional[Callable[[int], tuple]] = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if np.min(np.linalg.eigvalsh(self.Q)) <= 0:
            raise ValueError("Q must be positive definite")
        if np.min(np.linalg.eigvalsh(self.R)) < -1e-12:
            raise ValueError("R must be positive semidefinite")

    def at(self, t: int) -> tuple:
        if self.schedule is not None:
            return self.schedule(t)
        return self.Q, self.R

    def stage(self, t: int, x: np.ndarray, u: np.ndarray) -> float:
        Q, R = self.at(t)
        return float(x @ Q @ x + u @ R @ u)


@dataclass
class InputPolytope:
    """Bounded convex input polytope {u : F u <= b}."""

    F: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.F.shape[0] != self.b.size:
            raise DimensionError("F rows and b length differ")

    @classmethod
    def box(cls, lo, hi, m: int) -> "InputPolytope":
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (m,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (m,))
        F = np.vstack([np.eye(m), -np.eye(m)])
        b = np.concatenate([hi, -lo])
        return cls(F=F, b=b)

    @property
    def m(self) -> int:
        return self.F.shape[1]

    def contains(self, u: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.F @ u <= self.b + tol))

    def violation_rows(self, u: np.ndarray) -> np.ndarray:
        """Positive parts of F u - b, one entry per row."""
        return np.maximum(self.F @ u - self.b, 0.0)

    def violation(self, u: np.ndarray) -> float:
        return float(np.sum(self.violation_rows(u)))

    def chebyshev_center(self) -> tuple:
        """Center and radius of the largest inscribed ball (via LP)."""
        norms = np.linalg.norm(self.F, axis=1)
        c = np.zeros(self.m + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.F, norms[:, None]])
        res = linprog(c, A_ub=A_ub, b_ub=self.b, bounds=[(None, None)] * self.m + [(0, None)],
                      method="highs")
        if not res.success:
            raise QPError("polytope has no Chebyshev center (empty set)")
        return res.x[: self.m], float(res.x[-1])

    def is_bounded(self) -> bool:
        """LP check in each +/- coordinate direction."""
        for i in range(self.m):
            for sign in (1.0, -1.0):
                c = np.zeros(self.m)
                c[i] = -sign
                res = linprog(c, A_ub=self.F, b_ub=self.b,
                              bounds=[(None, None)] * self.m, method="highs")
                if res.status == 3:  # unbounded
                    return False
        return True

    def validate(self):
        _, r = self.chebyshev_center()
        if r <= 0:
            raise QPError("polytope has empty interior")
        if not self.is_bounded():
            raise QPError("polytope is unbounded")


@dataclass
class HorizonProblem:
    """Finite-horizon problem: minimize sum_{k=0}^{K-1} c_{t0+k}(x_k, u_k)
    subject to x_{k+1} = A x_k + B u_k, u_k in the polytope, x_0 fixed
    (or a free decision variable when free_x0 is set)."""

    A: np.ndarray
    B: np.ndarray
    x0: np.ndarray
    horizon: int
    cost: QuadCostSpec
    constraints: InputPolytope
    t0: int = 0
    free_x0: bool = False

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.A.shape[0] != self.A.shape[1] or self.B.shape[0] != self.A.shape[0]:
            raise DimensionError("inconsistent model dimensions")
        if self.x0.size != self.A.shape[0]:
            raise DimensionError("x0 dimension mismatch")
        if self.constraints.m != self.B.shape[1]:
            raise DimensionError("polytope dimension != input dimension")


@dataclass
class QPSolution:
    """Certified solution of a horizon problem."""

    u: np.ndarray            # (K, m) input sequence
    x: np.ndarray            # (K+1, n) state sequence incl. terminal state
    objective: float
    status: str              # optimal | infeasible | iteration-limit
    kkt_residual: float
    feas_residual: float
    multipliers: np.ndarray
    niter: int
    regularized: bool = False
    x0: np.ndarray = None    # initial state actually used (free-x0 solves)


# ---------------------------------------------------------------------------
# dense primal active-set QP:  min 1/2 v'H v + g'v  s.t.  G v <= h
# ---------------------------------------------------------------------------

def solve_qp_active_set(H, g, G, h, v0, tol_kkt=1e-8, max_iter=500):
    """Primal active-set method from a feasible start v0.

    Returns (v, lam, status, niter, regularized). The Hessian is
    Cholesky-factored; if it is numerically semidefinite a 1e-10 ridge is
    added (minimum-norm tie-break) and reported via the flag.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float).ravel()
    v = np.asarray(v0, dtype=float).ravel().copy()
    nv = v.size
    regularized = False
    try:
        chol = cho_factor(H)
    except np.linalg.LinAlgError:
        H = H + 1e-10 * np.eye(nv)
        regularized = True
        chol = cho_factor(H)

    have_ineq = G is not None and G.shape[0] > 0
    if not have_ineq:
        G = np.zeros((0, nv))
        h = np.zeros(0)
    nc = G.shape[0]
    lam = np.zeros(nc)
    working: list = []
    step_tol = 1e-12 * (1.0 + np.linalg.norm(g))

    for it in range(1, max_iter + 1):
        grad = H @ v + g
        if not working:
            if np.linalg.norm(grad, np.inf) <= tol_kkt:
                return v, lam, "optimal", it, regularized
            p = -cho_solve(chol, grad)
        else:
            Gw = G[working]
            lam_w, *_ = np.linalg.lstsq(Gw.T, -grad, rcond=None)
            # certificate check each iteration: near-singular Hessians
            # (minimum-norm tie-breaks) can otherwise slide along an
            # optimal face indefinitely
            lam_try = np.zeros(nc)
            lam_try[working] = np.maximum(lam_w, 0.0)
            kkt_try, feas_try = _kkt_residuals(H, g, G, h, v, lam_try)
            if kkt_try <= tol_kkt and feas_try <= tol_kkt:
                return v, lam_try, "optimal", it, regularized
            # null-space step: p = -Z (Z'HZ)^-1 Z'grad with Z = null(Gw)
            q, _ = np.linalg.qr(Gw.T, mode="complete")
            Z = q[:, len(working):]
            if Z.shape[1] == 0:
                p = np.zeros(nv)
            else:
                rhs = Z.T @ grad
                ZHZ = Z.T @ H @ Z
                p = -Z @ np.linalg.solve(ZHZ, rhs)

        if np.linalg.norm(p, np.inf) <= step_tol:
            if not working:
                return v, lam, "optimal", it, regularized
            if np.min(lam_w) >= -tol_kkt:
                lam = np.zeros(nc)
                lam[working] = np.maximum(lam_w, 0.0)
                return v, lam, "optimal", it, regularized
            working.pop(int(np.argmin(lam_w)))
            continue

        # ratio test against constraints not in the working set
        alpha = 1.0
        blocking = -1
        if nc:
            Gp = G @ p
            slack = h - G @ v
            for i in range(nc):
                if i in working or Gp[i] <= 1e-14:
                    continue
                ratio = max(slack[i], 0.0) / Gp[i]
                if ratio < alpha - 1e-15:
                    alpha = ratio
                    blocking = i
        v = v + alpha * p
        if blocking >= 0:
            working.append(blocking)

    return v, lam, "iteration-limit", max_iter, regularized


# ---------------------------------------------------------------------------
# condensing
# ---------------------------------------------------------------------------

class CondensedHorizon:
    """Condensed matrices of a horizon problem, shared across solves.

    With Phi = [I; A; ...; A^{K-1}] and Gamma the strictly lower block
    triangular input-to-state map, the stage-cost sum over x_0..x_{K-1},
    u_0..u_{K-1} becomes a quadratic in (x0, U); the fixed-x0 problem is
    the U-marginal with a linear term depending on x0.
    """

    def __init__(self, A, B, horizon, cost, t0=0):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.K = int(horizon)
        self.n = self.A.shape[0]
        self.m = self.B.shape[1]
        K, n, m = self.K, self.n, self.m

        Phi = np.empty((K, n, n))
        Phi[0] = np.eye(n)
        for k in range(1, K):
            Phi[k] = self.A @ Phi[k - 1]
        powersB = np.empty((max(K - 1, 1), n, m))
        if K > 1:
            powersB[0] = self.B
            for d in range(1, K - 1):
                powersB[d] = self.A @ powersB[d - 1]
        Gamma = np.zeros((K, n, K, m))
        for d in range(K - 1):
            ks = np.arange(d + 1, K)
            Gamma[ks, :, ks - 1 - d, :] = powersB[d]

        Qs = np.empty((K, n, n))
        Rs = np.empty((K, m, m))
        for k in range(K):
            Qk, Rk = cost.at(t0 + k)
            Qs[k] = Qk
            Rs[k] = Rk

        Gf = Gamma.reshape(K * n, K * m)
        QG = np.einsum("kij,kjL->kiL", Qs, Gamma.reshape(K, n, K * m)).reshape(K * n, K * m)
        Pf = Phi.reshape(K * n, n)
        QP_ = np.einsum("kij,kjl->kil", Qs, Phi).reshape(K * n, n)

        self.H_uu = 2.0 * (Gf.T @ QG)
        for k in range(K):
            self.H_uu[k * m:(k + 1) * m, k * m:(k + 1) * m] += 2.0 * Rs[k]
        self.H_ux = 2.0 * (Gf.T @ QP_)          # linear term map: g(x0) = H_ux @ x0
        self.H_xx = 2.0 * (Pf.T @ QP_)          # const(x0) = 1/2 x0' H_xx x0
        self.Phi = Phi
        self.Gamma_f = Gf
        self._cost = cost
        self._t0 = t0

    def rollout(self, x0, U):
        """States x_0..x_K under the model for the flat input vector U."""
        K, n, m = self.K, self.n, self.m
        u = U.reshape(K, m)
        x = np.empty((K + 1, n))
        x[0] = x0
        for k in range(K):
            x[k + 1] = self.A @ x[k] + self.B @ u[k]
        return x, u

    def objective(self, x0, U):
        x, u = self.rollout(x0, U)
        return float(sum(self._cost.stage(self._t0 + k, x[k], u[k]) for k in range(self.K)))


def _stack_constraints(poly: InputPolytope, K: int, lead: int = 0):
    """Block-diagonal per-step polytope rows, optionally preceded by
    `lead` unconstrained variables."""
    p, m = poly.F.shape
    G = np.zeros((p * K, lead + K * m))
    h = np.tile(poly.b, K)
    for k in range(K):
        G[k * p:(k + 1) * p, lead + k * m: lead + (k + 1) * m] = poly.F
    return G, h


def _kkt_residuals(H, g, G, h, v, lam):
    grad = H @ v + g + (G.T @ lam if G.shape[0] else 0.0)
    stat = float(np.linalg.norm(grad, np.inf))
    if G.shape[0]:
        primal = float(np.max(np.maximum(G @ v - h, 0.0)))
        comp = float(np.max(np.abs(lam * (G @ v - h))))
        dual = float(max(0.0, -np.min(lam)))
    else:
        primal = comp = dual = 0.0
    return max(stat, comp, dual), primal


def solve_horizon(problem: HorizonProblem, tol_kkt: float = 1e-8,
                  tol_feas: float = 1e-9, max_iter: int = 500,
                  warm_start: np.ndarray = None,
                  condensed: CondensedHorizon = None) -> QPSolution:
    """Solve the horizon problem with a certified active-set QP.

    For a fixed zero initial state with a strictly feasible origin the
    zero input sequence is optimal (the objective is a nonnegative form
    minimized at 0) and is returned directly.
    """
    K, m = problem.horizon, problem.B.shape[1]
    poly = problem.constraints
    cond = condensed or CondensedHorizon(problem.A, problem.B, K, problem.cost, problem.t0)

    if not problem.free_x0 and not np.any(problem.x0) and poly.contains(np.zeros(m), tol=-1e-12):
        U = np.zeros(K * m)
        x, u = cond.rollout(problem.x0, U)
        return QPSolution(u=u, x=x, objective=0.0, status="optimal",
                          kkt_residual=0.0, feas_residual=0.0,
                          multipliers=np.zeros(poly.F.shape[0] * K), niter=0,
                          x0=problem.x0.copy())

    try:
        center, radius = poly.chebyshev_center()
    except QPError:
        center, radius = None, -np.inf
    if radius <= 0:
        return QPSolution(u=np.zeros((K, m)), x=np.zeros((K + 1, problem.A.shape[0])),
                          objective=np.inf, status="infeasible", kkt_residual=np.inf,
                          feas_residual=np.inf, multipliers=np.zeros(0), niter=0)

    if problem.free_x0:
        n = problem.A.shape[0]
        H = np.zeros((n + K * m, n + K * m))
        H[:n, :n] = cond.H_xx
        H[n:, :n] = cond.H_ux
        H[:n, n:] = cond.H_ux.T
        H[n:, n:] = cond.H_uu
        g = np.zeros(n + K * m)
        G, h = _stack_constraints(poly, K, lead=n)
        v0 = np.concatenate([problem.x0, np.tile(center, K)])
        if warm_start is not None and warm_start.size == v0.size:
            v0 = warm_start
        v, lam, status, niter, reg = solve_qp_active_set(H, g, G, h, v0,
                                                         tol_kkt=tol_kkt, max_iter=max_iter)
        x0_sol, U = v[:n], v[n:]
    else:
        H = cond.H_uu
        g = cond.H_ux @ problem.x0
        G, h = _stack_constraints(poly, K)
        v0 = np.tile(center, K)
        if warm_start is not None and warm_start.size == v0.size:
            v0 = warm_start
        v, lam, status, niter, reg = solve_qp_active_set(H, g, G, h, v0,
                                                         tol_kkt=tol_kkt, max_iter=max_iter)
        x0_sol, U = problem.x0, v

    kkt, feas = _kkt_residuals(H, g, G, h, v, lam)
    if status == "optimal" and (kkt > tol_kkt or feas > tol_feas):
        status = "iteration-limit"
    x, u = cond.rollout(x0_sol, U)
    return QPSolution(u=u, x=x, objective=cond.objective(x0_sol, U), status=status,
                      kkt_residual=kkt, feas_residual=feas, multipliers=lam,
                      niter=niter, regularized=reg, x0=np.asarray(x0_sol, dtype=float))


def solve_full_horizon_baseline(sys, cost: QuadCostSpec, constraints: InputPolytope,
                                T: int, x_s: np.ndarray, tol_kkt: float = 1e-8) -> QPSolution:
    """T-step optimal constrained open-loop plan for the true plant.

    The objective value is the per-episode baseline the regret is
    measured against.
    """
    problem = HorizonProblem(A=sys.A, B=sys.B, x0=x_s, horizon=T, cost=cost,
                             constraints=constraints, t0=0)
    return solve_horizon(problem, tol_kkt=tol_kkt)


def riccati_reference(sys, cost: QuadCostSpec, T: int, x_s: np.ndarray, t0: int = 0):
    """Exact unconstrained finite-horizon LQ solution (test oracle).

    Backward recursion with zero terminal value; the pseudoinverse gives
    the minimum-norm input when R + B'PB is singular, matching the QP
    tie-break. Returns (U (T, m), X (T+1, n), cost).
    """
    A, B = sys.A, sys.B
    n, m = A.shape[0], B.shape[1]
    P = np.zeros((n, n))
    gains = []
    for k in range(T - 1, -1, -1):
        Qk, Rk = cost.at(t0 + k)
        S = Rk + B.T @ P @ B
        Kg = np.linalg.pinv(S) @ (B.T @ P @ A)
        gains.append(Kg)
        Acl = A - B @ Kg
        P = Qk + Kg.T @ Rk @ Kg + Acl.T @ P @ Acl
    gains.reverse()
    X = np.empty((T + 1, n))
    U = np.empty((T, m))
    X[0] = np.asarray(x_s, dtype=float)
    total = 0.0
    for k in range(T):
        U[k] = -gains[k] @ X[k]
        total += cost.stage(t0 + k, X[k], U[k])
        X[k + 1] = A @ X[k] + B @ U[k]
    return U, X, float(total)
