"""One-episode orchestration: interval doubling, boundary selection,
receding-horizon steps on the nominal trajectory, excitation, logging."""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from metarhc.excite import ExcitationEngine, PECertificate, certify_pe
from metarhc.inner import (ConfidenceSet, RegressionData, confidence_radius,
                           regularized_ls, select, unregularized_ls)
from metarhc.linsys import NoiseModel, SystemParams, observe, step
from metarhc.mpc import MpcController, propagate_nominal
from metarhc.qp import QPSolution


class EpisodeError(RuntimeError):
    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"step {t}: {message}")
        self.t = t


@dataclass
class IntervalSchedule:
    """Doubling schedule: interval j has scheduled length 2^{j-1} H; the
    last interval is truncated at T."""

    H: int
    T: int
    ends: List[int] = field(default_factory=list)  # 1-based inclusive ends

    @classmethod
    def build(cls, H: int, T: int) -> "IntervalSchedule":
        if H < 1 or T < 1:
            raise ValueError("H and T must be positive")
        ends = []
        j = 1
        while True:
            end = (2**j - 1) * H
            if end >= T:
                ends.append(T)
                break
            ends.append(end)
            j += 1
        return cls(H=H, T=T, ends=ends)

    @property
    def n_intervals(self) -> int:
        return len(self.ends)

    def start_of(self, j: int) -> int:
        return 1 if j == 1 else self.ends[j - 2] + 1

    def end_of(self, j: int) -> int:
        return self.ends[j - 1]


@dataclass
class IntervalRecord:
    """Per-interval facts: the estimate used while controlling it and the
    fits computed at its closing boundary."""

    j: int
    t_start: int
    t_end: int
    c_p: float
    theta_used: np.ndarray
    x_hat: np.ndarray
    select_cost: float
    theta_star: Optional[np.ndarray] = None
    theta_center: Optional[np.ndarray] = None
    beta: Optional[float] = None
    pe: Optional[PECertificate] = None


@dataclass
class EpisodeTrace:
    T: int
    n: int
    m: int
    x: np.ndarray        # (T+1, n) true states x_1..x_{T+1}
    y: np.ndarray        # (T+1, n) observations
    xbar: np.ndarray     # (T, n) nominal states
    u: np.ndarray        # (T, m) intermediate inputs
    du: np.ndarray       # (T, m) perturbations
    ubar: np.ndarray     # (T, m) applied inputs
    stage_cost: np.ndarray
    violation: np.ndarray         # per-step sum of positive parts
    violation_rowmax: np.ndarray  # per-step worst single row
    intervals: List[IntervalRecord]
    excite_sign_margins: List[float]
    excite_window_svals: List[float]

    def theta_used_at(self, t: int) -> np.ndarray:
        """Model estimate in force at 1-based time t."""
        for rec in self.intervals:
            if rec.t_start <= t <= rec.t_end:
                return rec.theta_used
        raise IndexError(f"t={t} outside the episode")


@dataclass
class EpisodeMetrics:
    policy_cost: float
    baseline_cost: float
    regret: float
    violation: float
    e_theta: float


def run_episode(sys: SystemParams, phi: np.ndarray, cfg, noise: NoiseModel) -> EpisodeTrace:
    """Execute one episode of the online policy against a hidden plant.

    The control path sees only observations and its own inputs; the true
    state enters the trace for measurement purposes alone.
    """
    n, m, T = cfg.n, cfg.m, cfg.T
    consts = cfg.inner_constants()
    sched = IntervalSchedule.build(consts.H, T)
    tset = cfg.theta_set
    cost = cfg.cost()
    poly = cfg.polytope
    sel_cfg = cfg.select_config()
    ctrl = MpcController(cfg.mpc_config())
    engine = ExcitationEngine(n, m)
    phi = np.asarray(phi, dtype=float)

    x = np.zeros((T + 1, n))
    y = np.zeros((T + 1, n))
    xbar = np.zeros((T, n))
    u = np.zeros((T, m))
    du = np.zeros((T, m))
    ubar = np.zeros((T, m))
    stage_cost = np.zeros(T)
    viol = np.zeros(T)
    viol_rowmax = np.zeros(T)

    x[0] = cfg.x_s
    y[0] = observe(x[0], noise)

    def fit_boundary(j: int, t_j: int):
        data = RegressionData.from_episode(y[:t_j + 1], ubar[:t_j])
        fit = unregularized_ls(data)
        # at lam = 0 the regularized estimate is the same argmin (min-norm)
        center = fit.theta if consts.lam == 0.0 else regularized_ls(data, phi, consts.lam)
        beta = confidence_radius(consts, j, t_j, fit.theta, phi,
                                 variant=cfg.beta_variant)
        return fit.theta, center, beta

    # t = 1: selection over the whole admissible set
    conf = ConfidenceSet.whole_set(tset, center=phi)
    res = select(0, 0, conf, y[0], sched.end_of(1) - 1, cost, poly, cfg.eps_c, sel_cfg)
    j = 1
    theta_cur = res.theta_hat
    ctrl.set_model(theta_cur.A, theta_cur.B)
    xbar_cur = res.x_hat
    engine.start_interval(consts.c_p(1))
    records = [IntervalRecord(j=1, t_start=1, t_end=sched.end_of(1), c_p=consts.c_p(1),
                              theta_used=theta_cur.theta, x_hat=res.x_hat.copy(),
                              select_cost=res.cost)]

    for t0 in range(T):
        t1 = t0 + 1
        if t1 > 1 and t1 == sched.end_of(j) + 1:
            # boundary: refresh fits on all data so far, then re-select
            try:
                theta_star, center, beta = fit_boundary(j, t1 - 1)
                rec = records[-1]
                rec.theta_star, rec.theta_center, rec.beta = theta_star, center, beta
                conf = ConfidenceSet(center=center, radius=beta, ambient=tset)
                res = select(j, t0, conf, y[t0], sched.end_of(j + 1) - 1,
                             cost, poly, cfg.eps_c, sel_cfg)
            except Exception as e:
                raise EpisodeError(str(e), t=t1) from e
            j += 1
            theta_cur = res.theta_hat
            ctrl.set_model(theta_cur.A, theta_cur.B)
            xbar_cur = res.x_hat
            engine.start_interval(consts.c_p(j))
            records.append(IntervalRecord(j=j, t_start=t1, t_end=sched.end_of(j),
                                          c_p=consts.c_p(j), theta_used=theta_cur.theta,
                                          x_hat=res.x_hat.copy(), select_cost=res.cost))

        feedback = y[t0] if cfg.y_feedback else xbar_cur
        try:
            u_t, _ = ctrl.step(t0, feedback, preview_end=sched.end_of(j) - 1)
        except Exception as e:
            raise EpisodeError(str(e), t=t1) from e
        xbar[t0] = xbar_cur
        u[t0] = u_t
        xbar_cur = propagate_nominal((theta_cur.A, theta_cur.B), xbar_cur, u_t)
        du[t0] = engine.perturb(u_t) if cfg.perturbation else np.zeros(m)
        ubar[t0] = u_t + du[t0]
        engine.record(ubar[t0])
        x[t0 + 1] = step(sys, x[t0], ubar[t0])
        y[t0 + 1] = observe(x[t0 + 1], noise)
        stage_cost[t0] = cost.stage(t0, x[t0], ubar[t0])
        rows = poly.violation_rows(ubar[t0])
        viol[t0] = float(np.sum(rows))
        viol_rowmax[t0] = float(np.max(rows)) if rows.size else 0.0

    # closing boundary of the final (possibly truncated) interval
    theta_star, center, beta = fit_boundary(j, T)
    records[-1].theta_star, records[-1].theta_center, records[-1].beta = \
        theta_star, center, beta

    for rec in records:
        t_j = rec.t_end
        z = np.hstack([x[:t_j], ubar[:t_j]])
        rec.pe = certify_pe(z, rec.j, consts.c_p(rec.j), consts.gamma)

    return EpisodeTrace(T=T, n=n, m=m, x=x, y=y, xbar=xbar, u=u, du=du, ubar=ubar,
                        stage_cost=stage_cost, violation=viol,
                        violation_rowmax=viol_rowmax, intervals=records,
                        excite_sign_margins=list(engine.sign_margins),
                        excite_window_svals=list(engine.window_min_svals))


def episode_metrics(trace: EpisodeTrace, baseline: QPSolution,
                    sys: SystemParams) -> EpisodeMetrics:
    """Regret, cumulative violation, and cumulative estimation error."""
    policy_cost = float(np.sum(trace.stage_cost))
    violation = float(np.sum(trace.violation))
    theta = sys.theta
    e_theta = 0.0
    for rec in trace.intervals:
        err = float(np.linalg.norm(rec.theta_used - theta))
        # the sum runs over t = 1..T-1
        steps = min(rec.t_end, trace.T - 1) - rec.t_start + 1
        if steps > 0:
            e_theta += err * steps
    return EpisodeMetrics(policy_cost=policy_cost, baseline_cost=baseline.objective,
                          regret=policy_cost - baseline.objective,
                          violation=violation, e_theta=e_theta)
