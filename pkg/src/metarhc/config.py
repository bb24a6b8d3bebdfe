"""Experiment configuration: schema, loading, and derived objects."""

import copy
from dataclasses import dataclass
from typing import List

import numpy as np
import yaml

from metarhc.inner import InnerConstants, SelectConfig
from metarhc.linsys import NoiseModel, SystemParams, ThetaSet
from metarhc.mpc import MpcConfig
from metarhc.qp import InputPolytope, QuadCostSpec


class ConfigError(ValueError):
    pass


# Allowed keys per section; values are validated structurally after merge.
_SCHEMA = {
    "system": {"n", "m", "x_s", "theta_set"},
    "system.theta_set": {"S", "rho_max", "anchor", "task_radius"},
    "system.theta_set.anchor": {"A", "B"},
    "noise": {"R", "eps_c"},
    "episode": {"T", "N", "delta", "H", "lam"},
    "cost": {"Q", "R"},
    "mpc": {"M", "clamp_preview", "warm_start"},
    "constraints": {"box", "F", "b"},
    "select": {"K_theta"},
    "solver": {"tol_kkt", "tol_feas"},
    "flags": {"perturbation", "beta_variant", "frozen_phi", "y_feedback", "save_traces"},
    "seeds": {"run_seed", "episode_seeds"},
    "": {"system", "noise", "episode", "cost", "mpc", "constraints", "select",
         "solver", "flags", "seeds", "phi_init"},
}

DEFAULT_CONFIG = {
    "system": {
        "n": 2,
        "m": 1,
        "x_s": 0.0,
        "theta_set": {
            "S": 2.0,
            "rho_max": 0.95,
            # rotation-heavy anchor: consecutive excitation pushes reach
            # every state direction, keeping the regressor Gram well fed
            "anchor": {"A": [[0.11, 0.64], [-0.64, 0.11]], "B": [[0.8], [0.8]]},
            "task_radius": 0.1,
        },
    },
    "noise": {"R": 0.05, "eps_c": 0.2},
    "episode": {"T": 256, "N": 20, "delta": 0.1, "H": None, "lam": None},
    "cost": {"Q": 1.0, "R": 0.1},
    "mpc": {"M": 12, "clamp_preview": True, "warm_start": True},
    "constraints": {"box": [-1.0, 1.0]},
    "select": {"K_theta": 8},
    "solver": {"tol_kkt": 1.0e-8, "tol_feas": 1.0e-9},
    "flags": {"perturbation": True, "beta_variant": "estimate", "frozen_phi": False,
              "y_feedback": False, "save_traces": "first"},
    "seeds": {"run_seed": 1, "episode_seeds": None},
    "phi_init": None,
}


def _check_keys(d: dict, prefix: str):
    allowed = _SCHEMA.get(prefix if prefix else "")
    if allowed is None:
        return
    for key, val in d.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in allowed:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(val, dict) and f"{path}" in _SCHEMA:
            _check_keys(val, path)


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val, path)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _as_matrix(value, rows: int, cols: int, path: str) -> np.ndarray:
    if np.isscalar(value):
        if rows != cols:
            raise ConfigError(f"{path}: scalar shorthand needs a square matrix")
        return float(value) * np.eye(rows)
    arr = np.asarray(value, dtype=float)
    if arr.shape != (rows, cols):
        raise ConfigError(f"{path}: expected shape ({rows}, {cols}), got {arr.shape}")
    return arr


@dataclass
class RunConfig:
    """Resolved experiment configuration (one meta-run)."""

    raw: dict

    def __post_init__(self):
        _check_keys(self.raw, "")
        sysd = self.raw["system"]
        self.n = int(sysd["n"])
        self.m = int(sysd["m"])
        for name, v in (("n", self.n), ("m", self.m)):
            if v < 1:
                raise ConfigError(f"system.{name} must be positive")
        x_s = sysd["x_s"]
        self.x_s = (np.full(self.n, float(x_s)) if np.isscalar(x_s)
                    else np.asarray(x_s, dtype=float))
        if self.x_s.shape != (self.n,):
            raise ConfigError(f"system.x_s: expected {self.n} entries")

        tsd = sysd["theta_set"]
        anchor = None
        if tsd.get("anchor") is not None:
            anchor = SystemParams(A=np.asarray(tsd["anchor"]["A"], dtype=float),
                                  B=np.asarray(tsd["anchor"]["B"], dtype=float))
        try:
            self.theta_set = ThetaSet(n=self.n, m=self.m, S=float(tsd["S"]),
                                      rho_max=float(tsd["rho_max"]), anchor=anchor,
                                      task_radius=float(tsd["task_radius"]))
        except ValueError as e:
            raise ConfigError(f"system.theta_set: {e}") from e

        nd = self.raw["noise"]
        self.R = float(nd["R"])
        self.eps_c = float(nd["eps_c"])
        if self.R < 0 or self.eps_c < 0:
            raise ConfigError("noise.R and noise.eps_c must be nonnegative")

        ep = self.raw["episode"]
        self.T = int(ep["T"])
        self.N = int(ep["N"])
        self.delta = float(ep["delta"])
        if self.T < 2 or self.N < 1:
            raise ConfigError("episode.T must be >= 2 and episode.N >= 1")
        if not 0 < self.delta < 1:
            raise ConfigError("episode.delta must lie in (0, 1)")
        self.H_override = None if ep["H"] is None else int(ep["H"])
        self.lam_override = None if ep["lam"] is None else float(ep["lam"])

        self.Q = _as_matrix(self.raw["cost"]["Q"], self.n, self.n, "cost.Q")
        self.R_cost = _as_matrix(self.raw["cost"]["R"], self.m, self.m, "cost.R")

        mp = self.raw["mpc"]
        self.M = int(mp["M"])
        self.clamp_preview = bool(mp["clamp_preview"])
        self.warm_start = bool(mp["warm_start"])
        if self.M < 1:
            raise ConfigError("mpc.M must be >= 1")

        cns = self.raw["constraints"]
        if "box" in cns and cns.get("box") is not None:
            lo, hi = cns["box"]
            self.polytope = InputPolytope.box(lo, hi, self.m)
        else:
            if cns.get("F") is None or cns.get("b") is None:
                raise ConfigError("constraints: give either box or (F, b)")
            self.polytope = InputPolytope(F=np.asarray(cns["F"], dtype=float),
                                          b=np.asarray(cns["b"], dtype=float))
        self.polytope.validate()

        self.K_theta = int(self.raw["select"]["K_theta"])
        if self.K_theta < 1:
            raise ConfigError("select.K_theta must be >= 1")

        sol = self.raw["solver"]
        self.tol_kkt = float(sol["tol_kkt"])
        self.tol_feas = float(sol["tol_feas"])

        fl = self.raw["flags"]
        self.perturbation = bool(fl["perturbation"])
        self.beta_variant = str(fl["beta_variant"])
        if self.beta_variant not in ("estimate", "pseudocode"):
            raise ConfigError("flags.beta_variant must be 'estimate' or 'pseudocode'")
        self.frozen_phi = bool(fl["frozen_phi"])
        self.y_feedback = bool(fl["y_feedback"])
        self.save_traces = str(fl["save_traces"])
        if self.save_traces not in ("none", "first", "all"):
            raise ConfigError("flags.save_traces must be none|first|all")

        sd = self.raw["seeds"]
        self.run_seed = int(sd["run_seed"])
        self.episode_seeds = (None if sd["episode_seeds"] is None
                              else [int(s) for s in sd["episode_seeds"]])
        if self.episode_seeds is not None and len(self.episode_seeds) != self.N:
            raise ConfigError("seeds.episode_seeds must have N entries")

        self.phi_init = (None if self.raw.get("phi_init") is None
                         else np.asarray(self.raw["phi_init"], dtype=float))
        if self.phi_init is not None and self.phi_init.shape != (self.n, self.n + self.m):
            raise ConfigError(f"phi_init: expected shape ({self.n}, {self.n + self.m})")

    # -- derived objects -----------------------------------------------------

    def inner_constants(self) -> InnerConstants:
        return InnerConstants.derive(self.n, self.m, self.T, self.N, self.delta,
                                     self.R, self.theta_set.S,
                                     lam=self.lam_override, H_override=self.H_override)

    def cost(self) -> QuadCostSpec:
        return QuadCostSpec(Q=self.Q, R=self.R_cost)

    def mpc_config(self) -> MpcConfig:
        return MpcConfig(M=self.M, cost=self.cost(), constraints=self.polytope,
                         tol_kkt=self.tol_kkt, tol_feas=self.tol_feas,
                         clamp_preview=self.clamp_preview, warm_start=self.warm_start)

    def select_config(self) -> SelectConfig:
        return SelectConfig(K_theta=self.K_theta, tol_kkt=self.tol_kkt,
                            tol_feas=self.tol_feas)

    def noise_model(self, seed) -> NoiseModel:
        return NoiseModel(R=self.R, eps_c=self.eps_c, seed=seed)

    def episode_seed(self, i: int) -> int:
        """Integer seed of episode i (0-based), explicit or derived."""
        if self.episode_seeds is not None:
            return self.episode_seeds[i]
        ss = np.random.SeedSequence(entropy=self.run_seed, spawn_key=(i,))
        return int(ss.generate_state(1, np.uint64)[0])

    def replace(self, **dotted) -> "RunConfig":
        """New config with dotted-path overrides, e.g. replace(**{'episode.T': 512})."""
        raw = copy.deepcopy(self.raw)
        for path, value in dotted.items():
            node = raw
            parts = path.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = value
        return RunConfig(raw=raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def default_config() -> RunConfig:
    return RunConfig(raw=copy.deepcopy(DEFAULT_CONFIG))


def config_from_dict(d: dict) -> RunConfig:
    _check_keys(d, "")
    return RunConfig(raw=_merge(DEFAULT_CONFIG, d))


def load_config(path: str) -> RunConfig:
    with open(path, "r") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        return config_from_dict(data)
    except ConfigError:
        raise
    except (KeyError, TypeError) as e:
        raise ConfigError(f"{path}: malformed config ({e})") from e


def parse_override(kv: str) -> tuple:
    """Parse a KEY=VALUE CLI override; values go through YAML parsing."""
    if "=" not in kv:
        raise ConfigError(f"override {kv!r} is not KEY=VALUE")
    key, val = kv.split("=", 1)
    return key.strip(), yaml.safe_load(val)


def apply_overrides(cfg: RunConfig, overrides: List[str]) -> RunConfig:
    out = cfg
    for kv in overrides:
        key, val = parse_override(kv)
        out = out.replace(**{key: val})
    return out
