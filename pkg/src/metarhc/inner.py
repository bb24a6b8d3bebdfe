"""Per-episode system identification.

Regularized least squares biased toward the meta-parameter, the
high-confidence parameter ball around it, and the joint (state, model)
selection solved at interval boundaries.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from metarhc.linsys import SystemParams, ThetaSet, project_into_theta_set
from metarhc.qp import CondensedHorizon, HorizonProblem, InputPolytope, QuadCostSpec, solve_horizon


class RankDeficiencyError(RuntimeError):
    pass


def _log_sqrt2_term(n: int, m: int, delta_tilde: float) -> float:
    """log((sqrt 2)^{n+m} / delta_tilde), shared by several constants."""
    return (n + m) * math.log(math.sqrt(2.0)) - math.log(delta_tilde)


@dataclass(frozen=True)
class InnerConstants:
    """Derived constants of the inner learner for one (T, N) configuration.

    gamma = 1/n_c; c_{p,j} = H_j^{-1/2}; H = j* n_c + n with j* the
    smallest integer satisfying the block-count inequality; lam defaults
    to T^{1/4}; delta_tilde = delta / (2 N log 2T).
    """

    n: int
    m: int
    T: int
    N: int
    delta: float
    R: float
    S: float
    lam: float
    delta_tilde: float
    n_c: int
    gamma: float
    gamma_y: float
    j_star: int
    H: int
    R_hat: float
    R_tilde: float
    n_c_tilde: float
    n_c_tilde2: float
    H_overridden: bool = False

    @classmethod
    def derive(cls, n, m, T, N, delta, R, S, lam=None, H_override=None,
               gamma_y_floor=1e-6):
        n_c = (n + 1) * m
        gamma = 1.0 / n_c
        delta_tilde = delta / (2.0 * N * math.log(2.0 * T))
        lam = float(T) ** 0.25 if lam is None else float(lam)
        n_c_tilde = (16.0 * n**2 * R**2 / gamma) ** 2
        n_c_tilde2 = math.sqrt(2.0) ** (n + m + 2)
        log_term = math.log(n_c_tilde2 * N * math.log(2.0 * T) / delta)
        target = max(2.0 * n_c, n_c_tilde * log_term**2)
        j_star = max(1, math.ceil(target / n_c))
        while j_star * n_c < target:  # guard against ceil rounding at the boundary
            j_star += 1
        if H_override is not None:
            H = int(H_override)
            overridden = True
        else:
            H = j_star * n_c + n
            overridden = False
        R_hat = n * (n + 1) * max(1.0, S) * R
        R_tilde = 2.0 * R_hat * math.sqrt(_log_sqrt2_term(n, m, delta_tilde))
        correction = 2.0 * n * R * math.sqrt(4.0 * _log_sqrt2_term(n, m, delta_tilde))
        gamma_y = gamma * (1.0 - correction / math.sqrt(gamma * math.sqrt(H)))
        if gamma_y <= 0:
            # only reachable under an H override below the j* requirement
            gamma_y = gamma_y_floor
        return cls(n=n, m=m, T=T, N=N, delta=delta, R=R, S=S, lam=lam,
                   delta_tilde=delta_tilde, n_c=n_c, gamma=gamma, gamma_y=gamma_y,
                   j_star=j_star, H=H, R_hat=R_hat, R_tilde=R_tilde,
                   n_c_tilde=n_c_tilde, n_c_tilde2=n_c_tilde2, H_overridden=overridden)

    def H_j(self, j: int) -> int:
        """Scheduled duration of interval j (1-based)."""
        return 2 ** (j - 1) * self.H

    def c_p(self, j: int) -> float:
        """Excitation scale of interval j: H_j^{-1/2}."""
        return float(self.H_j(j)) ** -0.5


@dataclass
class RegressionData:
    """Regressor rows z_k = [y_k, u_bar_k] with targets y_{k+1}, k = 1..t_j."""

    X: np.ndarray   # (t_j, n+m)
    Y: np.ndarray   # (t_j, n)

    @classmethod
    def from_episode(cls, ys: np.ndarray, ubars: np.ndarray) -> "RegressionData":
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        ubars = np.atleast_2d(np.asarray(ubars, dtype=float))
        t = ubars.shape[0]
        if ys.shape[0] < t + 1:
            raise ValueError("need t+1 observations for t input rows")
        X = np.hstack([ys[:t], ubars])
        Y = ys[1:t + 1]
        return cls(X=X, Y=Y)

    @property
    def count(self) -> int:
        return self.X.shape[0]

    def validate(self):
        if self.count == 0:
            raise ValueError("empty regression data")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("non-finite entries in regression data")


@dataclass
class LSFit:
    theta: np.ndarray
    rank: int
    cond: float
    rank_deficient: bool
    null_direction: Optional[np.ndarray] = None


def unregularized_ls(data: RegressionData) -> LSFit:
    """Ordinary least squares; minimum-norm solution with a rank report."""
    data.validate()
    d = data.X.shape[1]
    theta_T, _, rank, svals = np.linalg.lstsq(data.X, data.Y, rcond=None)
    cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else np.inf
    deficient = rank < d
    null_dir = None
    if deficient:
        _, _, Vt = np.linalg.svd(data.X, full_matrices=True)
        null_dir = Vt[-1]
    return LSFit(theta=theta_T.T, rank=int(rank), cond=cond,
                 rank_deficient=deficient, null_direction=null_dir)


def regularized_ls(data: RegressionData, prior: np.ndarray, lam: float) -> np.ndarray:
    """Ridge estimate biased toward the prior.

    theta' = prior' + (X'X + lam I)^-1 X'(Y - X prior'), the minimizer of
    the squared prediction loss plus lam * ||theta - prior||_F^2.
    """
    data.validate()
    if lam == 0.0:
        fit = unregularized_ls(data)
        if fit.rank_deficient:
            raise RankDeficiencyError(
                f"Gram matrix is singular with lam=0 (rank {fit.rank}); "
                f"null direction {fit.null_direction}")
        return fit.theta
    prior = np.asarray(prior, dtype=float)
    d = data.X.shape[1]
    G = data.X.T @ data.X + lam * np.eye(d)
    rhs = data.X.T @ (data.Y - data.X @ prior.T)
    return (prior.T + np.linalg.solve(G, rhs)).T


def ls_gradient_norm(data: RegressionData, theta: np.ndarray, prior: np.ndarray,
                     lam: float) -> float:
    """Frobenius norm of the regularized-loss gradient at theta (certificate)."""
    resid = data.Y - data.X @ theta.T
    grad = -2.0 * (data.X.T @ resid) + 2.0 * lam * (theta.T - np.asarray(prior).T)
    return float(np.linalg.norm(grad))


def confidence_radius(consts: InnerConstants, j: int, t_j: int,
                      theta_star: np.ndarray, phi: np.ndarray,
                      variant: str = "estimate") -> float:
    """High-probability radius beta_j around the regularized estimate.

    variant="estimate" (default): R~ / sqrt(gamma c_pj t_j)
      + lam ||theta*_j - phi||_F / (gamma_y c_pj t_j), the form the
      cumulative-error analysis manipulates.
    variant="pseudocode": R~ / sqrt(gamma c_pj t_j) + lam S / gamma_y,
      the looser listing form, kept for comparison runs.
    """
    cp = consts.c_p(j)
    first = consts.R_tilde / math.sqrt(consts.gamma * cp * t_j)
    if variant == "estimate":
        dist = float(np.linalg.norm(np.asarray(theta_star) - np.asarray(phi)))
        second = consts.lam * dist / (consts.gamma_y * cp * t_j)
    elif variant == "pseudocode":
        second = consts.lam * consts.S / consts.gamma_y
    else:
        raise ValueError(f"unknown beta variant {variant!r}")
    return first + second


@dataclass
class ConfidenceSet:
    """Frobenius ball around the estimate, intersected with the ambient set."""

    center: np.ndarray
    radius: float
    ambient: ThetaSet

    def contains(self, theta: np.ndarray, tol: float = 1e-9) -> bool:
        theta = np.asarray(theta, dtype=float)
        if np.isfinite(self.radius):
            if np.linalg.norm(theta - self.center) > self.radius + tol:
                return False
        return self.ambient.contains(theta, tol=tol)

    @classmethod
    def whole_set(cls, ambient: ThetaSet, center: np.ndarray) -> "ConfidenceSet":
        """The interval-0 set: the whole ambient set (infinite radius)."""
        return cls(center=np.asarray(center, dtype=float), radius=np.inf, ambient=ambient)


# ---------------------------------------------------------------------------
# SELECT: joint (initial state, model) choice at interval boundaries
# ---------------------------------------------------------------------------

@dataclass
class SelectConfig:
    K_theta: int = 8
    tol_kkt: float = 1e-8
    tol_feas: float = 1e-9


@dataclass
class SelectResult:
    x_hat: np.ndarray
    theta_hat: SystemParams
    cost: float
    candidate_costs: List[float] = field(default_factory=list)


def _ball_candidates(center: np.ndarray, radius: float, count: int,
                     tset: ThetaSet) -> List[np.ndarray]:
    """Deterministic quasi-random points in the Frobenius ball, folded
    into the ambient set (Halton sequence, unscrambled)."""
    if count <= 0 or radius <= 0:
        return []
    dim = center.size
    sampler = qmc.Halton(d=dim + 1, scramble=False)
    sampler.fast_forward(1)  # skip the all-zero first point
    pts = sampler.random(count)
    out = []
    for row in pts:
        direction = ndtri(np.clip(row[:dim], 1e-9, 1 - 1e-9))
        nrm = np.linalg.norm(direction)
        if nrm == 0.0:
            continue
        r = radius * row[dim] ** (1.0 / dim)
        raw = center + (r / nrm) * direction.reshape(center.shape)
        cand = project_into_theta_set(raw, tset)
        if np.isfinite(radius):
            # keep the candidate inside the ball after the set fold
            gap = np.linalg.norm(cand - center)
            if gap > radius:
                cand = center + (radius / gap) * (cand - center)
                cand = project_into_theta_set(cand, tset)
        out.append(cand)
    return out


def generate_candidates(conf: ConfidenceSet, count: int) -> List[np.ndarray]:
    """Candidate models: the (set-folded) center first, then quasi-random
    ball points. Duplicates are removed."""
    tset = conf.ambient
    center = project_into_theta_set(conf.center, tset)
    if np.isfinite(conf.radius):
        ball_center, ball_radius = conf.center, conf.radius
    else:
        ball_center, ball_radius = np.zeros_like(conf.center), tset.S
    cands = [center]
    cands.extend(_ball_candidates(ball_center, ball_radius, count - 1, tset))
    uniq = []
    for c in cands:
        if not any(np.array_equal(c, u) for u in uniq):
            uniq.append(c)
    return uniq


def _window_cost_for_model(theta: np.ndarray, n: int, m: int, y_t: np.ndarray,
                           eps_c: float, t: int, t_end: int, cost: QuadCostSpec,
                           constraints: InputPolytope, cfg: SelectConfig):
    """Best window cost for one candidate model.

    The initial state lives in the eps_c ball around y_t. The QP is solved
    with the initial state free; if the optimum leaves the ball it is
    projected onto it and kept only when it beats the x = y_t fallback.
    """
    A, B = theta[:, :n], theta[:, n:]
    K = t_end - t + 1
    cond = CondensedHorizon(A, B, K, cost, t0=t)

    def solve_fixed(x0):
        p = HorizonProblem(A=A, B=B, x0=x0, horizon=K, cost=cost,
                           constraints=constraints, t0=t)
        return solve_horizon(p, tol_kkt=cfg.tol_kkt, tol_feas=cfg.tol_feas, condensed=cond)

    if eps_c == 0.0:
        sol = solve_fixed(y_t)
        return y_t.copy(), sol.objective

    p_free = HorizonProblem(A=A, B=B, x0=y_t, horizon=K, cost=cost,
                            constraints=constraints, t0=t, free_x0=True)
    sol_free = solve_horizon(p_free, tol_kkt=cfg.tol_kkt, tol_feas=cfg.tol_feas,
                             condensed=cond)
    gap = np.linalg.norm(sol_free.x0 - y_t)
    if gap <= eps_c:
        return sol_free.x0, sol_free.objective
    x_proj = y_t + (eps_c / gap) * (sol_free.x0 - y_t)
    sol_proj = solve_fixed(x_proj)
    sol_fall = solve_fixed(y_t)
    if sol_proj.objective <= sol_fall.objective:
        return x_proj, sol_proj.objective
    return y_t.copy(), sol_fall.objective


def select_from_candidates(candidates: List[np.ndarray], n: int, m: int,
                           y_t: np.ndarray, eps_c: float, t: int, t_end: int,
                           cost: QuadCostSpec, constraints: InputPolytope,
                           cfg: SelectConfig, center: np.ndarray) -> SelectResult:
    """Evaluate each candidate's optimal window cost and keep the best.

    Ties are broken by smaller distance to the set center, then by
    candidate order (deterministic).
    """
    y_t = np.asarray(y_t, dtype=float)
    best = None
    costs = []
    for idx, theta in enumerate(candidates):
        x_hat, c = _window_cost_for_model(theta, n, m, y_t, eps_c, t, t_end,
                                          cost, constraints, cfg)
        costs.append(c)
        dist = float(np.linalg.norm(theta - center))
        key = (c, dist, idx)
        if best is None or key < best[0]:
            best = (key, x_hat, theta)
    _, x_hat, theta = best
    return SelectResult(x_hat=np.asarray(x_hat, dtype=float),
                        theta_hat=SystemParams.from_theta(theta, n, m),
                        cost=best[0][0], candidate_costs=costs)


def select(j: int, t: int, conf: ConfidenceSet, y_t: np.ndarray, t_end: int,
           cost: QuadCostSpec, constraints: InputPolytope, eps_c: float,
           cfg: SelectConfig = None) -> SelectResult:
    """Joint (x_hat, theta_hat) choice minimizing the predicted cost of the
    window [t, t_end] over the confidence set, by candidate enumeration."""
    cfg = cfg or SelectConfig()
    tset = conf.ambient
    candidates = generate_candidates(conf, cfg.K_theta)
    center = project_into_theta_set(conf.center, tset)
    return select_from_candidates(candidates, tset.n, tset.m, y_t, eps_c, t, t_end,
                                  cost, constraints, cfg, center)
