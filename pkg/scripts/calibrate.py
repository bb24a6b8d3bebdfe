"""Pre-flight measurement of the acceptance-suite margins (not shipped as a test)."""

import math
import sys
import time

import numpy as np

sys.path.insert(0, "tests")

from metarhc import harness
from metarhc.config import config_from_dict
from metarhc.harness import run_one_episode
from metarhc.linsys import sample_theta


def scalar_dict(T=256, N=8, **kw):
    d = {"system": {"n": 1, "m": 1,
                    "theta_set": {"anchor": {"A": [[0.6]], "B": [[1.2]]},
                                  "task_radius": 0.1}},
         "noise": {"R": 0.02, "eps_c": 0.1},
         "episode": {"T": T, "N": N},
         "cost": {"Q": 1.0, "R": 0.1}}
    return d


def n2_dict(T=256, N=8):
    return {"episode": {"T": T, "N": N}}


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
            "cost": {"Q": 1.0, "R": 0.1}}


def pe_suite():
    print("=== C4: PE suite ===")
    t0 = time.perf_counter()
    worst = np.inf
    count = 0
    cells = ([("scalar", scalar_dict(), T, s) for T in (128, 256) for s in range(10)]
             + [("n2", n2_dict(), T, s) for T in (128, 512) for s in range(10)]
             + [("n3m2", n3m2_dict(), 256, s) for s in range(10)])
    for name, d, T, s in cells:
        cfg = config_from_dict(d).replace(**{"episode.T": T, "episode.N": 1,
                                             "seeds.run_seed": s})
        seed = cfg.episode_seed(0)
        ss = np.random.SeedSequence(seed)
        th, _ = ss.spawn(2)
        sys = sample_theta(cfg.theta_set, np.random.default_rng(th))
        trace, _, _ = run_one_episode(cfg, sys, np.zeros((cfg.n, cfg.n + cfg.m)), seed)
        r = min(rec.pe.lambda_min / rec.pe.threshold for rec in trace.intervals)
        worst = min(worst, r)
        count += 1
    print(f"cells={count} worst ratio={worst:.3f} elapsed={time.perf_counter()-t0:.1f}s")


def coverage_suite():
    print("=== C5: coverage ===")
    t0 = time.perf_counter()
    cfg = config_from_dict({"episode": {"T": 128, "N": 100},
                            "flags": {"save_traces": "none"}})
    res = harness.run(cfg)
    good = sum(r.coverage_all_intervals for r in res.rows)
    print(f"coverage {good}/100 elapsed={time.perf_counter()-t0:.1f}s")


def slope_suite():
    print("=== C6: T-sweep slopes (scalar config) ===")
    t0 = time.perf_counter()
    cfg = config_from_dict(scalar_dict(N=4))
    cfg = cfg.replace(**{"flags.save_traces": "none"})
    sw = harness.sweep(cfg, "T", [128, 256, 512, 1024], seeds=list(range(10)))
    for p in sw.summary:
        print(f"  T={p['axis_value']}: regret={p['mean_regret']:.2f} "
              f"E={p['mean_E_theta']:.2f} V={p['mean_violation']:.3f} "
              f"pe={p['pe_rate']:.2f} cov={p['coverage_rate']:.2f}")
    print("slopes:", {k: round(v, 3) for k, v in sw.slopes.items()},
          f"elapsed={time.perf_counter()-t0:.1f}s")


def meta_suite():
    print("=== C7: meta improvement ===")
    t0 = time.perf_counter()
    wins_a = wins_b = 0
    for s in range(10):
        base = config_from_dict(scalar_dict(T=128, N=20))
        base = base.replace(**{"seeds.run_seed": 100 + s, "flags.save_traces": "none"})
        res = harness.run(base)
        d = [r.phi_distance for r in res.rows]
        if np.mean(d[10:]) < np.mean(d[:10]):
            wins_a += 1
        frozen = base.replace(**{"flags.frozen_phi": True})
        res_f = harness.run(frozen)
        if res.aggregates["mean_E_theta"] <= res_f.aggregates["mean_E_theta"]:
            wins_b += 1
        print(f"  seed {s}: early={np.mean(d[:10]):.3f} late={np.mean(d[10:]):.3f} "
              f"E_meta={res.aggregates['mean_E_theta']:.2f} "
              f"E_frozen={res_f.aggregates['mean_E_theta']:.2f}")
    print(f"wins_a={wins_a}/10 wins_b={wins_b}/10 elapsed={time.perf_counter()-t0:.1f}s")


def violation_suite():
    print("=== C8: violation budget ===")
    t0 = time.perf_counter()
    ratios = {}
    for T in (128, 512):
        vals = []
        for s in range(5):
            d = scalar_dict(T=T, N=1)
            d["constraints"] = {"box": [-0.05, 0.05]}
            cfg = config_from_dict(d).replace(**{"seeds.run_seed": s,
                                                 "flags.save_traces": "none"})
            seed = cfg.episode_seed(0)
            ss = np.random.SeedSequence(seed)
            th, _ = ss.spawn(2)
            sys = sample_theta(cfg.theta_set, np.random.default_rng(th))
            trace, _, m = run_one_episode(cfg, sys, np.zeros((1, 2)), seed)
            consts = cfg.inner_constants()
            denom = sum(math.sqrt(consts.c_p(rec.j)) * (rec.t_end - rec.t_start + 1)
                        for rec in trace.intervals)
            vals.append(m.violation / denom)
            f_inf = np.max(np.sum(np.abs(cfg.polytope.F), axis=1))
            for rec in trace.intervals:
                sl = slice(rec.t_start - 1, rec.t_end)
                bound = f_inf * 2 * math.sqrt(rec.c_p) + 1e-9
                assert np.all(trace.violation_rowmax[sl] <= bound), "budget violated"
        ratios[T] = float(np.mean(vals))
        print(f"  T={T}: ratio mean={ratios[T]:.4f} per-seed={np.round(vals,4)}")
    lo, hi = min(ratios.values()), max(ratios.values())
    print(f"stability: hi/lo = {hi/lo:.2f} elapsed={time.perf_counter()-t0:.1f}s")


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    if which in ("pe", "all"):
        pe_suite()
    if which in ("coverage", "all"):
        coverage_suite()
    if which in ("slopes", "all"):
        slope_suite()
    if which in ("meta", "all"):
        meta_suite()
    if which in ("violation", "all"):
        violation_suite()
