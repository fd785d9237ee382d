"""Run configuration: nested JSON with strict key checking.

Config files are JSON objects whose nesting mirrors the dotted key names,
e.g. {"nlp": {"tol_defect": 1e-6}} for nlp.tol_defect.  Matrix-valued keys
take the diagonal as a list.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ModelParams, NoiseModel
from .glq import RobustnessSpec, TrackingPenalties
from .planner import PlannerConfig
from .trajopt import NlpConfig
from .unscented import UtParams


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "dt": 0.2,
    "v_max": 0.5,
    "omega_max": float(np.pi),
    "ut": {"alpha": 1.0, "beta": 2.0, "kappa": 0.0},
    "nlp": {"tol_endpoint": 1e-6, "tol_defect": 1e-6,
            "max_outer": 100, "max_inner": 50},
    "nmpc": {"horizon": 10, "max_iter": 30},
    "track": {"Q": [0.0, 0.0, 0.0], "R": [1.0, 1.0],
              "Qdelta": [100.0, 100.0, 10.0], "Rdelta": [0.0, 0.0],
              "QT_scale": 10.0},
    "lqrm": {"dtheta_max": float(np.pi / 6)},
    "planner": {"num_samples": 2000, "steer_horizon": 30,
                "max_step_distance": 1.5, "neighbor_gamma": 4.0,
                "w_pos": 1.0, "w_ang": 0.1, "seed": 0, "headroom": 0.75,
                "R": [1.0, 1.0]},
    "risk": {"beta": 0.1, "t_max": 1000},
    "noise": {"kind": "laplace", "var": 5e-7, "seed": 0},
}

_LIST_KEYS = {"Q", "R", "Qdelta", "Rdelta"}


def _merge(base, override, path=""):
    out = dict(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{here}: expected an object")
            out[key] = _merge(base[key], val, here)
        elif key in _LIST_KEYS:
            if not isinstance(val, (list, tuple)) or len(val) != len(base[key]):
                raise ConfigError(f"{here}: expected a list of {len(base[key])} numbers")
            out[key] = [float(v) for v in val]
        elif isinstance(base[key], bool):
            out[key] = bool(val)
        elif isinstance(base[key], int) and not isinstance(base[key], bool):
            if isinstance(val, bool) or (isinstance(val, float) and val != int(val)):
                raise ConfigError(f"{here}: expected an integer")
            out[key] = int(val)
        elif isinstance(base[key], float):
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"{here}: expected a number")
            out[key] = float(val)
        elif isinstance(base[key], str):
            if not isinstance(val, str):
                raise ConfigError(f"{here}: expected a string")
            out[key] = val
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULTS)))

    def model(self):
        return ModelParams(self.raw["dt"], self.raw["v_max"], self.raw["omega_max"])

    def ut(self):
        u = self.raw["ut"]
        return UtParams(u["alpha"], u["beta"], u["kappa"])

    def nlp(self):
        n = self.raw["nlp"]
        return NlpConfig(tol_endpoint=n["tol_endpoint"], tol_defect=n["tol_defect"],
                         max_outer=n["max_outer"], max_inner=n["max_inner"],
                         mu0=1000.0)

    def planner(self, seed=None, samples=None):
        p = self.raw["planner"]
        return PlannerConfig(
            num_samples=p["num_samples"] if samples is None else samples,
            steer_horizon=p["steer_horizon"],
            max_step_distance=p["max_step_distance"],
            neighbor_gamma=p["neighbor_gamma"],
            w_pos=p["w_pos"], w_ang=p["w_ang"],
            seed=p["seed"] if seed is None else seed,
            headroom=p["headroom"],
            steer_R=np.diag(p["R"]))

    def penalties(self):
        t = self.raw["track"]
        return TrackingPenalties(Q=np.diag(t["Q"]), R=np.diag(t["R"]),
                                 Q_delta=np.diag(t["Qdelta"]),
                                 R_delta=np.diag(t["Rdelta"]),
                                 QT_scale=t["QT_scale"])

    def robustness(self):
        return RobustnessSpec(self.raw["lqrm"]["dtheta_max"])

    def noise(self, var=None, seed=None):
        n = self.raw["noise"]
        return NoiseModel(n["kind"],
                          (n["var"] if var is None else var) * np.eye(3),
                          n["seed"] if seed is None else seed)

    def w_cov(self):
        return self.raw["noise"]["var"] * np.eye(3)

    def nmpc_horizon(self):
        return self.raw["nmpc"]["horizon"]

    def nmpc_max_iter(self):
        return self.raw["nmpc"]["max_iter"]


def load_config(path=None, overrides=None):
    raw = json.loads(json.dumps(DEFAULTS))
    if path is not None:
        with open(path) as f:
            user = json.load(f)
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        raw = _merge(raw, user)
    if overrides:
        raw = _merge(raw, overrides)
    return RunConfig(raw)
