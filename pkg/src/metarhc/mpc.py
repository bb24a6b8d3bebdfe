"""Receding-horizon control law: minimize the look-ahead cost under the
current model estimate and apply the first input."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from metarhc.qp import (CondensedHorizon, HorizonProblem, InputPolytope,
                        QuadCostSpec, solve_horizon)


@dataclass
class MpcConfig:
    M: int
    cost: QuadCostSpec
    constraints: InputPolytope
    tol_kkt: float = 1e-8
    tol_feas: float = 1e-9
    clamp_preview: bool = True   # limit look-ahead to the current interval
    warm_start: bool = True

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")


class MpcController:
    """Per-episode controller instance.

    Caches condensed matrices per (model, horizon) and warm-starts each
    solve with the shifted previous solution; both are pure speedups, the
    optimum is unchanged and still KKT-certified.
    """

    def __init__(self, cfg: MpcConfig):
        self.cfg = cfg
        self._A = None
        self._B = None
        self._condensed = {}
        self._last_u = None

    def set_model(self, A: np.ndarray, B: np.ndarray):
        self._A = np.atleast_2d(np.asarray(A, dtype=float))
        self._B = np.atleast_2d(np.asarray(B, dtype=float))
        self._condensed.clear()
        self._last_u = None

    def _effective_horizon(self, t: int, preview_end: Optional[int]) -> int:
        if preview_end is None or not self.cfg.clamp_preview:
            return self.cfg.M
        return max(1, min(self.cfg.M, preview_end - t + 1))

    def step(self, t: int, x: np.ndarray, preview_end: Optional[int] = None):
        """First input of the minimizing sequence from state x at time t."""
        K = self._effective_horizon(t, preview_end)
        # condensed matrices are time-invariant only for unscheduled costs
        if self.cfg.cost.schedule is not None:
            cond = CondensedHorizon(self._A, self._B, K, self.cfg.cost, t0=t)
        else:
            if K not in self._condensed:
                self._condensed[K] = CondensedHorizon(self._A, self._B, K, self.cfg.cost, t0=0)
            cond = self._condensed[K]
        problem = HorizonProblem(A=self._A, B=self._B, x0=x, horizon=K,
                                 cost=self.cfg.cost, constraints=self.cfg.constraints,
                                 t0=t)
        warm = None
        if self.cfg.warm_start and self._last_u is not None:
            prev = self._last_u
            if prev.shape[0] >= 2:
                shifted = np.vstack([prev[1:], prev[-1:]])
            else:
                shifted = prev
            if shifted.shape[0] >= K:
                warm = shifted[:K].ravel()
        sol = solve_horizon(problem, tol_kkt=self.cfg.tol_kkt, tol_feas=self.cfg.tol_feas,
                            warm_start=warm, condensed=cond)
        if sol.status != "optimal":
            raise RuntimeError(f"MPC solve failed at t={t}: status={sol.status}")
        self._last_u = sol.u
        return sol.u[0], sol


def mpc_step(t: int, x: np.ndarray, model: tuple, cfg: MpcConfig,
             preview_end: Optional[int] = None) -> np.ndarray:
    """One-shot receding-horizon step for the model (A_hat, B_hat)."""
    ctrl = MpcController(cfg)
    ctrl.set_model(*model)
    u, _ = ctrl.step(t, np.asarray(x, dtype=float), preview_end=preview_end)
    return u


def propagate_nominal(model: tuple, xbar: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Advance the nominal (estimated-dynamics) state with the
    intermediate input: xbar' = A_hat xbar + B_hat u."""
    A, B = model
    return np.atleast_2d(np.asarray(A, dtype=float)) @ np.asarray(xbar, dtype=float) + \
        np.atleast_2d(np.asarray(B, dtype=float)) @ np.asarray(u, dtype=float)
