"""Command-line interface: run, sweep, validate, plotdata."""

import argparse
import csv
import json
import logging
import sys

from metarhc import harness
from metarhc.config import ConfigError, apply_overrides, default_config, load_config


def _setup_logging(verbosity: str):
    level = {"quiet": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG}[verbosity]
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")


def _load(args) -> "RunConfig":
    cfg = load_config(args.config) if args.config else default_config()
    if args.flag:
        cfg = apply_overrides(cfg, args.flag)
    return cfg


def _parse_int_list(text: str):
    return [int(tok) for tok in text.replace(",", " ").split()]


def cmd_run(args) -> int:
    cfg = _load(args)
    seeds = _parse_int_list(args.seeds) if args.seeds else [cfg.run_seed]
    for seed in seeds:
        scfg = cfg.replace(**{"seeds.run_seed": seed})
        out = args.out
        if out and len(seeds) > 1:
            out = f"{out.rstrip('/')}/seed{seed:04d}"
        result = harness.run(scfg, out_dir=out, resume=args.resume)
        print(f"run seed={seed}: {len(result.rows)} episodes, "
              f"mean regret {result.aggregates['mean_regret']:.6g}, "
              f"mean violation {result.aggregates['mean_violation']:.6g}, "
              f"mean E_theta {result.aggregates['mean_E_theta']:.6g}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    axis, _, values = args.axis.partition("=")
    axis = axis.strip()
    vals = _parse_int_list(values)
    seeds = _parse_int_list(args.seeds) if args.seeds else [cfg.run_seed]
    result = harness.sweep(cfg, axis, vals, seeds, out_dir=args.out,
                           workers=args.workers)
    for point in result.summary:
        print(f"{axis}={point['axis_value']}: mean regret "
              f"{point['mean_regret']:.6g} (n={point['n_seeds']})")
    for key, slope in result.slopes.items():
        print(f"slope[{key}] = {slope:.4f}")
    if result.failures:
        for cell, msg in result.failures.items():
            print(f"FAILED cell {cell}: {msg}", file=sys.stderr)
        return 1
    return 0


def cmd_validate(args) -> int:
    cfg = _load(args)
    report = harness.validate(cfg, n_samples=args.samples)
    consts = report["derived_constants"]
    print(f"sampled systems: {len(report['samples'])}")
    print(f"  max rho(A)      = {report['max_rho']:.6g}")
    print(f"  min c_g         = {report['min_c_g']:.6g}")
    print(f"  max ||theta||_F = {report['max_fro']:.6g}")
    print("derived constants:")
    for key in ("n_c", "delta_tilde", "lam", "gamma", "gamma_y", "j_star", "H"):
        print(f"  {key} = {consts[key]}")
    for w in report["warnings"]:
        print(f"WARNING: {w}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
    return 0


def cmd_plotdata(args) -> int:
    rows = harness.plotdata(args.results, args.kind)
    if args.out is None:
        csv.writer(sys.stdout).writerows(rows)
    else:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="metarhc",
                                     description="online meta-learning receding-horizon "
                                                 "control experiments")
    parser.add_argument("--verbosity", choices=["quiet", "info", "debug"],
                        default="info")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one meta-run")
    p_run.add_argument("--config", help="YAML config path (defaults baked in)")
    p_run.add_argument("--seeds", help="comma-separated run seeds")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--flag", action="append", default=[],
                       help="dotted-path override KEY=VALUE (repeatable)")
    p_run.add_argument("--resume", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run an axis sweep")
    p_sweep.add_argument("--config")
    p_sweep.add_argument("--axis", required=True, help="e.g. T=128,256,512")
    p_sweep.add_argument("--seeds", help="comma-separated run seeds")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--flag", action="append", default=[])
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="check assumptions and constants")
    p_val.add_argument("--config")
    p_val.add_argument("--samples", type=int, default=50)
    p_val.add_argument("--json", help="also dump the full report to this path")
    p_val.add_argument("--flag", action="append", default=[])
    p_val.set_defaults(func=cmd_validate)

    p_plot = sub.add_parser("plotdata", help="emit plain (x, y, stderr) series")
    p_plot.add_argument("--results", required=True, help="run or sweep directory")
    p_plot.add_argument("--kind", required=True, choices=harness.PLOT_KINDS)
    p_plot.add_argument("--out")
    p_plot.set_defaults(func=cmd_plotdata)

    args = parser.parse_args(argv)
    _setup_logging(args.verbosity)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
