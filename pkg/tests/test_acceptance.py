"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The heavy criteria (4-7)
together take on the order of 15 minutes on a desktop-class machine; each
asserts its own wall-clock budget.
"""

import filecmp
import math
import time

import numpy as np
import pytest

from metarhc import harness
from metarhc.config import config_from_dict
from metarhc.harness import run_one_episode
from metarhc.inner import SelectConfig, select_from_candidates
from metarhc.linsys import SystemParams, ThetaSet, sample_theta
from metarhc.qp import (HorizonProblem, InputPolytope, QuadCostSpec,
                        riccati_reference, solve_horizon)
from tests.conftest import random_stable_system
from tests.oracles import enumerate_select_pairs, grid_search_2stage_scalar


def _report(num, name, ok, detail=""):
    print(f"\n[acceptance] criterion {num} ({name}): "
          f"{'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def scalar_dict(T=256, N=8):
    """The default scalar configuration used by the scaling experiments."""
    return {"system": {"n": 1, "m": 1,
                       "theta_set": {"anchor": {"A": [[0.6]], "B": [[1.2]]},
                                     "task_radius": 0.1}},
            "noise": {"R": 0.02, "eps_c": 0.1},
            "episode": {"T": T, "N": N},
            "cost": {"Q": 1.0, "R": 0.1},
            "flags": {"save_traces": "none"}}


def n3m2_dict(T=256, N=4):
    return {"system": {"n": 3, "m": 2,
                       "theta_set": {"S": 2.5,
                                     "anchor": {"A": [[0.0726, -0.6401, -0.0865],
                                                      [0.4115, 0.1129, -0.4904],
                                                      [0.4979, 0.0, 0.4178]],
                                                "B": [[1.0, 0.0], [0.0, 1.0],
                                                      [0.6, -0.6]]},
                                     "task_radius": 0.1}},
            "noise": {"R": 0.03, "eps_c": 0.15},
            "episode": {"T": T, "N": N},
            "cost": {"Q": 1.0, "R": 0.1},
            "flags": {"save_traces": "none"}}


def _episode(cfg, run_seed):
    cfg = cfg.replace(**{"seeds.run_seed": run_seed})
    seed = cfg.episode_seed(0)
    ss = np.random.SeedSequence(seed)
    th, _ = ss.spawn(2)
    sys = sample_theta(cfg.theta_set, np.random.default_rng(th))
    trace, baseline, metrics = run_one_episode(
        cfg, sys, np.zeros((cfg.n, cfg.n + cfg.m)), seed)
    return cfg, sys, trace, metrics


def test_criterion_1_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_u, worst_c = 0.0, 0.0
    for _ in range(200):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        K = int(rng.integers(1, 21))
        sys = random_stable_system(rng, n, m)
        cost = QuadCostSpec(Q=np.eye(n), R=0.3 * np.eye(m))
        x0 = rng.normal(size=n)
        U, _, c_ref = riccati_reference(sys, cost, K, x0)
        sol = solve_horizon(HorizonProblem(A=sys.A, B=sys.B, x0=x0, horizon=K,
                                           cost=cost,
                                           constraints=InputPolytope.box(-1e6, 1e6, m)))
        assert sol.status == "optimal"
        worst_u = max(worst_u, float(np.max(np.abs(sol.u - U))))
        worst_c = max(worst_c, abs(sol.objective - c_ref))
    elapsed = time.perf_counter() - t0
    ok = worst_u <= 1e-6 and worst_c <= 1e-8 and elapsed < 10.0
    _report(1, "oracle equivalence",
            ok, f"max input gap {worst_u:.2e}, max cost gap {worst_c:.2e}, "
                f"{elapsed:.1f}s")


def test_criterion_2_kkt_certification():
    rng = np.random.default_rng(7)
    worst_kkt, worst_feas = 0.0, 0.0
    count = 0
    for _ in range(60):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        K = int(rng.integers(2, 15))
        sys = random_stable_system(rng, n, m)
        r_scale = float(rng.choice([0.0, 0.1, 1.0]))
        cost = QuadCostSpec(Q=np.eye(n), R=r_scale * np.eye(m))
        bound = float(rng.choice([0.05, 0.3, 1e6]))
        p = HorizonProblem(A=sys.A, B=sys.B, x0=rng.normal(size=n), horizon=K,
                           cost=cost, constraints=InputPolytope.box(-bound, bound, m),
                           free_x0=bool(rng.integers(0, 2)))
        sol = solve_horizon(p)
        assert sol.status == "optimal"
        worst_kkt = max(worst_kkt, sol.kkt_residual)
        worst_feas = max(worst_feas, sol.feas_residual)
        count += 1
    ok = worst_kkt <= 1e-8 and worst_feas <= 1e-9
    _report(2, "KKT certification",
            ok, f"{count} solves, max KKT {worst_kkt:.2e}, "
                f"max infeasibility {worst_feas:.2e}")


def test_criterion_3_exact_identification_noiseless():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(99)
    dims = [(1, 1), (2, 1), (2, 2), (3, 1)] * 5
    for k, (n, m) in enumerate(dims[:20]):
        tset = ThetaSet(n=n, m=m, S=2.0, rho_max=0.95)
        sys = sample_theta(tset, rng)
        d = {"system": {"n": n, "m": m, "theta_set": {"S": 2.0, "anchor": None}},
             "noise": {"R": 0.0, "eps_c": 0.0},
             "episode": {"T": 64, "N": 1, "lam": 0.0},
             "cost": {"Q": 1.0, "R": 0.1},
             "flags": {"save_traces": "none"}}
        cfg = config_from_dict(d)
        seed = cfg.episode_seed(0)
        trace, _, _ = run_one_episode(cfg, sys, np.zeros((n, n + m)), seed)
        assert len(trace.intervals) >= 2, "need a completed first interval"
        err = float(np.linalg.norm(trace.intervals[1].theta_used - sys.theta))
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 5.0
    _report(3, "exact identification",
            ok, f"20 systems, worst error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_4_persistence_of_excitation():
    t0 = time.perf_counter()
    cells = ([("scalar", scalar_dict(), T, s) for T in (128, 256) for s in range(10)]
             + [("default-n2", {"flags": {"save_traces": "none"}}, T, s)
                for T in (128, 512) for s in range(10)]
             + [("n3m2", n3m2_dict(), 256, s) for s in range(10)])
    worst = np.inf
    failures = 0
    for name, d, T, s in cells:
        cfg = config_from_dict(d).replace(**{"episode.T": T, "episode.N": 1})
        cfg, sys, trace, _ = _episode(cfg, run_seed=s)
        for rec in trace.intervals:
            worst = min(worst, rec.pe.lambda_min / rec.pe.threshold)
            if not rec.pe.passed:
                failures += 1
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and elapsed < 300.0
    _report(4, "persistence of excitation",
            ok, f"{len(cells)} runs, {failures} failures, "
                f"worst margin {worst:.3f}x, {elapsed:.0f}s")


def test_criterion_5_confidence_coverage():
    t0 = time.perf_counter()
    cfg = config_from_dict({"episode": {"T": 128, "N": 100},
                            "flags": {"save_traces": "none"}})
    assert cfg.delta == 0.1
    res = harness.run(cfg)
    covered = sum(r.coverage_all_intervals for r in res.rows)
    elapsed = time.perf_counter() - t0
    ok = covered >= 90 and elapsed < 600.0
    _report(5, "confidence coverage",
            ok, f"{covered}/100 episodes covered at all boundaries, {elapsed:.0f}s")


def test_criterion_6_sublinearity_in_T():
    t0 = time.perf_counter()
    cfg = config_from_dict(scalar_dict(N=4))
    sw = harness.sweep(cfg, "T", [128, 256, 512, 1024], seeds=list(range(10)))
    slope_e = sw.slopes["mean_E_theta"]
    slope_r = sw.slopes["mean_regret"]
    elapsed = time.perf_counter() - t0
    ok = slope_e <= 0.9 and slope_r <= 0.9 and elapsed < 1800.0
    _report(6, "sublinearity in T",
            ok, f"slope E_theta {slope_e:.3f}, slope regret {slope_r:.3f}, "
                f"{elapsed:.0f}s")


def test_criterion_7_meta_improvement():
    t0 = time.perf_counter()
    wins_phi, wins_e = 0, 0
    for s in range(10):
        base = config_from_dict(scalar_dict(T=128, N=20))
        base = base.replace(**{"seeds.run_seed": 100 + s})
        res = harness.run(base)
        d = [r.phi_distance for r in res.rows]
        if np.mean(d[10:]) < np.mean(d[:10]):
            wins_phi += 1
        frozen = base.replace(**{"flags.frozen_phi": True})
        res_f = harness.run(frozen)
        if res.aggregates["mean_E_theta"] <= res_f.aggregates["mean_E_theta"]:
            wins_e += 1
    elapsed = time.perf_counter() - t0
    ok = wins_phi >= 8 and wins_e >= 8 and elapsed < 1200.0
    _report(7, "meta improvement",
            ok, f"phi-distance wins {wins_phi}/10, "
                f"E_theta-vs-frozen wins {wins_e}/10, {elapsed:.0f}s")


def test_criterion_8_violation_budget():
    t0 = time.perf_counter()
    ratios = {}
    for T in (128, 512):
        vals = []
        for s in range(5):
            d = scalar_dict(T=T, N=1)
            d["constraints"] = {"box": [-0.05, 0.05]}
            cfg = config_from_dict(d)
            cfg, sys, trace, metrics = _episode(cfg, run_seed=s)
            f_inf = np.max(np.sum(np.abs(cfg.polytope.F), axis=1))
            for rec in trace.intervals:
                sl = slice(rec.t_start - 1, rec.t_end)
                bound = f_inf * 2 * math.sqrt(rec.c_p) + 1e-9
                assert np.all(trace.violation_rowmax[sl] <= bound), \
                    f"per-step budget violated in interval {rec.j}"
            denom = sum(math.sqrt(rec.c_p) * (rec.t_end - rec.t_start + 1)
                        for rec in trace.intervals)
            vals.append(metrics.violation / denom)
        ratios[T] = float(np.mean(vals))
    hi, lo = max(ratios.values()), min(ratios.values())
    elapsed = time.perf_counter() - t0
    ok = hi / lo <= 1.5
    _report(8, "violation budget",
            ok, f"V / sum(sqrt(c_p) H_j) = {ratios[128]:.3f} (T=128) vs "
                f"{ratios[512]:.3f} (T=512), spread {hi / lo:.2f}x, {elapsed:.0f}s")


def test_criterion_9_determinism(tmp_path):
    cfg = config_from_dict({"episode": {"T": 32, "N": 2}})
    harness.run(cfg, out_dir=str(tmp_path / "a"))
    harness.run(cfg, out_dir=str(tmp_path / "b"))
    same = all(filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)
               for f in ("results.csv", "manifest.json", "meta_state.json"))
    same = same and filecmp.cmp(tmp_path / "a" / "traces" / "episode_0001.csv",
                                tmp_path / "b" / "traces" / "episode_0001.csv",
                                shallow=False)
    _report(9, "determinism", same, "result files byte-identical across reruns")


def test_criterion_10_micro_suites():
    # the operation-level examples run as the unit modules in this suite;
    # re-assert the two named cross-implementation agreements here
    p = HorizonProblem(A=[[0.5]], B=[[1.0]], x0=[1.0], horizon=2,
                       cost=QuadCostSpec(Q=np.eye(1), R=np.eye(1)),
                       constraints=InputPolytope.box(-0.1, 0.1, 1))
    sol = solve_horizon(p)
    u_grid, c_grid = grid_search_2stage_scalar(0.5, 1.0, 1.0, -0.1, 0.1, res=1e-4)
    qp_ok = (np.max(np.abs(sol.u.ravel() - u_grid)) <= 2e-4
             and sol.objective <= c_grid + 1e-12)

    cost = QuadCostSpec(Q=np.eye(1), R=np.eye(1))
    poly = InputPolytope.box(-1, 1, 1)
    eps, y = 0.2, np.array([0.5])
    thetas = [np.array([[0.3, 1.0]]), np.array([[0.6, 0.7]]), np.array([[0.1, 1.3]])]

    def solve_fixed(theta, x0):
        pp = HorizonProblem(A=theta[:, :1], B=theta[:, 1:], x0=np.array([x0]),
                            horizon=5, cost=cost, constraints=poly)
        return solve_horizon(pp).objective

    th_ref, x_ref, c_ref = enumerate_select_pairs(
        thetas, [y[0] - eps, y[0], y[0] + eps], y, 0, 4, cost, poly, solve_fixed)
    res = select_from_candidates(thetas, 1, 1, y, eps, 0, 4, cost, poly,
                                 SelectConfig(), center=thetas[0])
    sel_ok = (abs(res.cost - c_ref) <= 1e-9
              and np.allclose(res.theta_hat.theta, th_ref)
              and np.allclose(res.x_hat, [x_ref], atol=1e-9))
    _report(10, "property micro-suites", qp_ok and sel_ok,
            "grid-QP and selection-enumeration oracles agree")
