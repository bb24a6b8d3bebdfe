"""Multi-episode meta-runs, sweeps, validation, and result persistence.

Result layout per run directory:
  results.csv     one row per episode (stable schema, deterministic bytes)
  manifest.json   config echo, derived constants, aggregates, meta history
  timing.txt      wall clock (the only file allowed to differ across reruns)
  traces/         optional per-episode step tables
"""

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from metarhc import __version__
from metarhc.config import RunConfig
from metarhc.linsys import g_matrix, sample_theta
from metarhc.outer import MetaState, episode_anchor, meta_update
from metarhc.policy import episode_metrics, run_episode
from metarhc.qp import solve_full_horizon_baseline

log = logging.getLogger("metarhc")

RESULT_COLUMNS = ["episode_index", "seed", "regret", "baseline_cost", "policy_cost",
                  "violation", "E_theta", "coverage_all_intervals",
                  "pe_all_intervals", "phi_distance"]


@dataclass
class EpisodeRow:
    episode_index: int
    seed: int
    regret: float
    baseline_cost: float
    policy_cost: float
    violation: float
    E_theta: float
    coverage_all_intervals: int
    pe_all_intervals: int
    phi_distance: float

    def as_list(self) -> list:
        return [getattr(self, c) for c in RESULT_COLUMNS]


@dataclass
class RunResult:
    rows: List[EpisodeRow]
    aggregates: dict
    out_dir: Optional[str] = None
    meta: Optional[MetaState] = None


def _aggregate(rows: List[EpisodeRow]) -> dict:
    def mean(attr):
        return float(np.mean([getattr(r, attr) for r in rows])) if rows else float("nan")

    return {
        "episodes": len(rows),
        "mean_regret": mean("regret"),
        "mean_violation": mean("violation"),
        "mean_E_theta": mean("E_theta"),
        "mean_policy_cost": mean("policy_cost"),
        "mean_baseline_cost": mean("baseline_cost"),
        "coverage_rate": mean("coverage_all_intervals"),
        "pe_rate": mean("pe_all_intervals"),
        "mean_phi_distance": mean("phi_distance"),
    }


def _write_results_csv(path: str, rows: List[EpisodeRow]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row.as_list()])


def read_results_csv(path: str) -> List[EpisodeRow]:
    rows = []
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(EpisodeRow(
                episode_index=int(rec["episode_index"]), seed=int(rec["seed"]),
                regret=float(rec["regret"]), baseline_cost=float(rec["baseline_cost"]),
                policy_cost=float(rec["policy_cost"]), violation=float(rec["violation"]),
                E_theta=float(rec["E_theta"]),
                coverage_all_intervals=int(rec["coverage_all_intervals"]),
                pe_all_intervals=int(rec["pe_all_intervals"]),
                phi_distance=float(rec["phi_distance"])))
    return rows


def _write_trace_csv(path: str, trace):
    cols = (["t"] + [f"x{i}" for i in range(trace.n)] + [f"y{i}" for i in range(trace.n)]
            + [f"xbar{i}" for i in range(trace.n)] + [f"u{i}" for i in range(trace.m)]
            + [f"du{i}" for i in range(trace.m)] + [f"ubar{i}" for i in range(trace.m)]
            + ["stage_cost", "violation"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for t in range(trace.T):
            row = ([t + 1] + [repr(v) for v in trace.x[t]] + [repr(v) for v in trace.y[t]]
                   + [repr(v) for v in trace.xbar[t]] + [repr(v) for v in trace.u[t]]
                   + [repr(v) for v in trace.du[t]] + [repr(v) for v in trace.ubar[t]]
                   + [repr(float(trace.stage_cost[t])), repr(float(trace.violation[t]))])
            writer.writerow(row)


def _derived_constants_block(cfg: RunConfig) -> dict:
    consts = cfg.inner_constants()
    return {
        "n_c": consts.n_c,
        "n_c_formula": "(n+1)*m",
        "delta_tilde": consts.delta_tilde,
        "delta_tilde_formula": "delta / (2*N*log(2*T))",
        "lam": consts.lam,
        "lam_formula": "T**0.25 unless overridden",
        "gamma": consts.gamma,
        "gamma_formula": "1/n_c",
        "gamma_y": consts.gamma_y,
        "j_star": consts.j_star,
        "H": consts.H,
        "H_formula": "j_star*n_c + n unless overridden",
        "H_overridden": consts.H_overridden,
        "R_hat": consts.R_hat,
        "R_tilde": consts.R_tilde,
    }


def run_one_episode(cfg: RunConfig, sys, phi: np.ndarray, episode_seed: int):
    """Single episode + baseline + metrics; returns (trace, baseline, metrics)."""
    ss = np.random.SeedSequence(episode_seed)
    _, noise_seed = ss.spawn(2)
    noise = cfg.noise_model(noise_seed)
    trace = run_episode(sys, phi, cfg, noise)
    baseline = solve_full_horizon_baseline(sys, cfg.cost(), cfg.polytope, cfg.T, cfg.x_s)
    metrics = episode_metrics(trace, baseline, sys)
    return trace, baseline, metrics


def _coverage_flag(trace, sys, tset) -> int:
    theta = sys.theta
    for rec in trace.intervals:
        if rec.theta_center is None:
            return 0
        inside = (np.linalg.norm(theta - rec.theta_center) <= rec.beta
                  and tset.contains(theta))
        if not inside:
            return 0
    return 1


def _pe_flag(trace) -> int:
    return int(all(rec.pe is not None and rec.pe.passed for rec in trace.intervals))


def run(cfg: RunConfig, out_dir: Optional[str] = None, resume: bool = False) -> RunResult:
    """Execute the N-episode meta-run and persist results.

    Episode i: sample the plant from the task distribution, run the
    policy from the current meta-parameter, measure against the
    full-information baseline, then take the meta step (unless frozen).
    """
    t_begin = time.perf_counter()
    if cfg.N < cfg.T:
        log.info("N=%d < T=%d: the episode-count hypothesis of the theory is "
                 "not met; desk-scale sweeps routinely violate it.", cfg.N, cfg.T)

    meta = MetaState.initial(cfg.n, cfg.m, cfg.phi_init)
    rows: List[EpisodeRow] = []
    start_idx = 0
    csv_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        res_path = os.path.join(out_dir, "results.csv")
        meta_path = os.path.join(out_dir, "meta_state.json")
        if resume and os.path.exists(res_path) and os.path.exists(meta_path):
            rows = read_results_csv(res_path)
            with open(meta_path) as fh:
                meta = MetaState.from_dict(json.load(fh))
            start_idx = len(rows)
            log.info("resuming at episode %d", start_idx + 1)
            csv_fh = open(res_path, "a", newline="")
        else:
            csv_fh = open(res_path, "w", newline="")
            csv.writer(csv_fh).writerow(RESULT_COLUMNS)

    def _persist_row(row: EpisodeRow):
        # rows stream to disk so an interrupted run can resume
        if csv_fh is None:
            return
        csv.writer(csv_fh).writerow([repr(v) if isinstance(v, float) else v
                                     for v in row.as_list()])
        csv_fh.flush()
        with open(os.path.join(out_dir, "meta_state.json"), "w") as fh:
            json.dump(meta.to_dict(), fh, indent=1, sort_keys=True)

    true_thetas = []
    traces_to_save = []
    try:
        for i in range(start_idx, cfg.N):
            seed = cfg.episode_seed(i)
            ss = np.random.SeedSequence(seed)
            theta_ss, _ = ss.spawn(2)
            sys = sample_theta(cfg.theta_set, np.random.default_rng(theta_ss))
            true_thetas.append(sys.theta.tolist())
            try:
                trace, baseline, metrics = run_one_episode(cfg, sys, meta.phi, seed)
            except Exception as e:
                raise RuntimeError(f"episode {i + 1} failed: {e}") from e

            fits = [rec.theta_star for rec in trace.intervals
                    if rec.theta_star is not None]
            theta_star_i, _ = episode_anchor(fits, meta.phi)
            phi_distance = float(np.linalg.norm(theta_star_i - meta.phi))
            row = EpisodeRow(
                episode_index=i + 1, seed=seed, regret=metrics.regret,
                baseline_cost=metrics.baseline_cost, policy_cost=metrics.policy_cost,
                violation=metrics.violation, E_theta=metrics.e_theta,
                coverage_all_intervals=_coverage_flag(trace, sys, cfg.theta_set),
                pe_all_intervals=_pe_flag(trace), phi_distance=phi_distance)
            rows.append(row)
            if cfg.save_traces == "all" or (cfg.save_traces == "first" and i == start_idx):
                traces_to_save.append((i + 1, trace))
            if not cfg.frozen_phi:
                meta = meta_update(meta, theta_star_i, cfg.theta_set)
            else:
                meta = MetaState(phi=meta.phi, episode_index=meta.episode_index + 1,
                                 losses=meta.losses + [phi_distance],
                                 anchors=meta.anchors + [theta_star_i],
                                 cumulative_loss=meta.cumulative_loss + phi_distance)
            _persist_row(row)
            log.debug("episode %d/%d: regret=%.4g violation=%.4g E_theta=%.4g",
                      i + 1, cfg.N, metrics.regret, metrics.violation, metrics.e_theta)
    finally:
        if csv_fh is not None:
            csv_fh.close()

    aggregates = _aggregate(rows)
    result = RunResult(rows=rows, aggregates=aggregates, out_dir=out_dir, meta=meta)

    if out_dir is not None:
        manifest = {
            "config": cfg.to_dict(),
            "derived_constants": _derived_constants_block(cfg),
            "aggregates": aggregates,
            "episode_seeds": [cfg.episode_seed(i) for i in range(cfg.N)],
            "true_thetas": true_thetas if start_idx == 0 else None,
            "meta_state": meta.to_dict(),
            "versions": {"metarhc": __version__, "numpy": np.__version__},
        }
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        if traces_to_save:
            tdir = os.path.join(out_dir, "traces")
            os.makedirs(tdir, exist_ok=True)
            for idx, trace in traces_to_save:
                _write_trace_csv(os.path.join(tdir, f"episode_{idx:04d}.csv"), trace)
        with open(os.path.join(out_dir, "timing.txt"), "w") as fh:
            fh.write(f"wall_clock_seconds={time.perf_counter() - t_begin:.3f}\n")
    return result


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of log y against log x."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    slope, _ = np.linalg.lstsq(A, ly, rcond=None)[0]
    return float(slope)


_AXIS_PATHS = {"T": "episode.T", "N": "episode.N"}


def _sweep_cell(args):
    cfg_dict, axis, value, seed, cell_dir = args
    from metarhc.config import config_from_dict  # local import for worker processes
    cfg = config_from_dict(cfg_dict)
    cfg = cfg.replace(**{_AXIS_PATHS[axis]: int(value), "seeds.run_seed": int(seed)})
    result = run(cfg, out_dir=cell_dir)
    return axis, value, seed, result.aggregates


@dataclass
class SweepResult:
    axis: str
    values: list
    seeds: list
    cells: dict            # (value, seed) -> aggregates
    summary: list          # per-axis-point dicts
    slopes: dict
    failures: dict = field(default_factory=dict)


def sweep(cfg: RunConfig, axis: str, values: List[int], seeds: List[int],
          out_dir: Optional[str] = None, workers: int = 1) -> SweepResult:
    """Run the (axis value x seed) cross product and fit scaling slopes.

    Partial results are preserved: failed cells are recorded in the
    completed-cells manifest and excluded from aggregates.
    """
    if axis not in _AXIS_PATHS:
        raise ValueError(f"axis must be one of {sorted(_AXIS_PATHS)}")
    if sorted(values) != list(values):
        raise ValueError("axis values must be sorted ascending")
    jobs = []
    for value in values:
        for seed in seeds:
            cell_dir = (os.path.join(out_dir, f"{axis}{value:05d}_seed{seed:04d}")
                        if out_dir else None)
            jobs.append((cfg.to_dict(), axis, value, seed, cell_dir))

    cells, failures = {}, {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_sweep_cell, job): job for job in jobs}
            for fut, job in futures.items():
                _, _, value, seed, _ = job
                try:
                    _, v, s, agg = fut.result()
                    cells[(v, s)] = agg
                except Exception as e:
                    failures[(value, seed)] = str(e)
    else:
        for job in jobs:
            _, _, value, seed, _ = job
            try:
                _, v, s, agg = _sweep_cell(job)
                cells[(v, s)] = agg
            except Exception as e:
                failures[(value, seed)] = str(e)

    summary = []
    for value in values:
        point = {"axis_value": value}
        per_seed = [cells[(value, s)] for s in seeds if (value, s) in cells]
        point["n_seeds"] = len(per_seed)
        for key in ("mean_regret", "mean_violation", "mean_E_theta",
                    "coverage_rate", "pe_rate"):
            vals = np.array([p[key] for p in per_seed]) if per_seed else np.array([np.nan])
            point[key] = float(np.mean(vals))
            point[f"stderr_{key}"] = (float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
                                      if len(vals) > 1 else 0.0)
        summary.append(point)

    slopes = {}
    xs = [p["axis_value"] for p in summary if p["n_seeds"] > 0]
    for key in ("mean_regret", "mean_violation", "mean_E_theta"):
        ys = [p[key] for p in summary if p["n_seeds"] > 0]
        if len(xs) >= 2 and all(v > 0 for v in ys):
            slopes[key] = fit_loglog_slope(xs, ys)
        else:
            slopes[key] = float("nan")

    result = SweepResult(axis=axis, values=list(values), seeds=list(seeds),
                         cells=cells, summary=summary, slopes=slopes, failures=failures)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        cols = list(summary[0].keys()) if summary else []
        with open(os.path.join(out_dir, "sweep_summary.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for p in summary:
                writer.writerow([repr(p[c]) if isinstance(p[c], float) else p[c]
                                 for c in cols])
        with open(os.path.join(out_dir, "slopes.json"), "w") as fh:
            json.dump({"axis": axis, "slopes": slopes}, fh, indent=1, sort_keys=True)
        with open(os.path.join(out_dir, "completed_cells.json"), "w") as fh:
            json.dump({"completed": sorted([f"{axis}={v} seed={s}" for v, s in cells]),
                       "failed": {f"{axis}={v} seed={s}": msg
                                  for (v, s), msg in failures.items()}},
                      fh, indent=1, sort_keys=True)
    return result


# ---------------------------------------------------------------------------
# validation & plot data
# ---------------------------------------------------------------------------

def validate(cfg: RunConfig, n_samples: int = 50) -> dict:
    """Sample systems from the task set and report assumption diagnostics."""
    consts = cfg.inner_constants()
    rng = np.random.default_rng(cfg.run_seed)
    samples = []
    warnings = []
    for _ in range(n_samples):
        sys = sample_theta(cfg.theta_set, rng, check_controllability=False)
        _, c_g = g_matrix(sys)
        samples.append({
            "rho": sys.spectral_radius(),
            "controllable": sys.is_controllable(),
            "c_g": c_g,
            "fro_norm": sys.frobenius_norm(),
        })
    if any(not s["controllable"] for s in samples):
        warnings.append("controllability failure in sampled systems")
    if any(s["c_g"] <= 0 for s in samples):
        warnings.append("c_g <= 0: controllability-margin assumption fails")
    if any(s["rho"] >= cfg.theta_set.rho_max for s in samples):
        warnings.append("spectral radius at or above rho_max")
    if cfg.N < cfg.T:
        warnings.append(f"N={cfg.N} < T={cfg.T} (theory hypothesis not met; "
                        "expected at desk scale)")
    if consts.H_overridden:
        warnings.append(f"H overridden to {consts.H} (j* formula gives "
                        f"{consts.j_star * consts.n_c + cfg.n})")
    report = {
        "samples": samples,
        "derived_constants": _derived_constants_block(cfg),
        "min_c_g": float(min(s["c_g"] for s in samples)),
        "max_rho": float(max(s["rho"] for s in samples)),
        "max_fro": float(max(s["fro_norm"] for s in samples)),
        "warnings": warnings,
    }
    return report


PLOT_KINDS = ("regret-vs-T", "regret-vs-N", "coverage", "traces")


def plotdata(path: str, kind: str) -> List[list]:
    """Extract plain (x, y, stderr) series from result files."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"kind must be one of {PLOT_KINDS}")
    if kind in ("regret-vs-T", "regret-vs-N", "coverage"):
        summary_path = os.path.join(path, "sweep_summary.csv")
        if not os.path.exists(summary_path):
            raise FileNotFoundError(summary_path)
        rows = [["x", "y", "stderr"]]
        with open(summary_path, newline="") as fh:
            for rec in csv.DictReader(fh):
                if kind == "coverage":
                    rows.append([float(rec["axis_value"]), float(rec["coverage_rate"]),
                                 float(rec["stderr_coverage_rate"])])
                else:
                    rows.append([float(rec["axis_value"]), float(rec["mean_regret"]),
                                 float(rec["stderr_mean_regret"])])
        return rows
    # traces: per-step stage cost of the first stored episode
    tdir = os.path.join(path, "traces")
    if not os.path.isdir(tdir):
        raise FileNotFoundError(tdir)
    files = sorted(os.listdir(tdir))
    if not files:
        raise FileNotFoundError(f"{tdir} is empty")
    rows = [["x", "y", "stderr"]]
    with open(os.path.join(tdir, files[0]), newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append([float(rec["t"]), float(rec["stage_cost"]), 0.0])
    return rows
