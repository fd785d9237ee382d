"""Closed-loop Monte Carlo evaluation of a plan under different controllers.

A trial replays the plan's inputs (open loop) or tracks its mean states
(LQR, LQRm, NMPC) under one realization of the process noise, terminating
immediately when a realized state fails the deterministic collision check.
Paired comparison across controllers comes from seeding the noise with
base_seed + trial index, independent of the controller.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, geometry, glq, trajopt
from .config import RunConfig
from .dynamics import NoiseModel
from .geometry import Environment
from .planner import Plan

CONTROLLERS = ("openloop", "lqr", "lqrm", "nmpc")

CSV_COLUMNS = ("trial", "controller", "noise_var", "collided", "collision_step",
               "dx_cost", "u_cost", "runtime_s", "reached_goal", "seed")


@dataclass
class TrialResult:
    trial: int
    controller: str
    noise_var: float
    collided: bool
    collision_step: int | None
    dx_cost: float
    u_cost: float
    runtime_s: float
    reached_goal: bool
    seed: int
    solver_failures: int = 0


@dataclass
class SweepSpec:
    noise_vars: list
    trials: int
    controllers: list = field(default_factory=lambda: list(CONTROLLERS))
    base_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        bad = [c for c in self.controllers if c not in CONTROLLERS]
        if bad:
            raise ValueError(f"unknown controller {bad[0]!r}")


class _OpenLoop:
    failures = 0

    def __init__(self, plan: Plan):
        self.inputs = plan.inputs

    def control(self, k, x):
        return self.inputs[k]


class _PolicyController:
    failures = 0

    def __init__(self, plan: Plan, policy, model):
        self.plan = plan
        self.policy = policy
        self.model = model

    def control(self, k, x):
        return glq.apply_policy(self.policy, k, x, self.plan.means[k],
                                self.plan.inputs[k], self.model)


def build_tracking_policy(plan: Plan, rc: RunConfig, robust: bool):
    spec = rc.robustness() if robust else None
    stages, terminal = glq.build_tracking_stages(
        plan.means, plan.inputs, rc.penalties(), rc.model(), spec=spec,
        w_cov=rc.w_cov(), defect_tol=rc.nlp().tol_defect * 1.5)
    return glq.solve_glq(stages, terminal)


def make_controller_factory(name, plan: Plan, env: Environment, rc: RunConfig):
    """Per-trial controller constructor; policies are solved once up front."""
    model = rc.model()
    if name == "openloop":
        return lambda: _OpenLoop(plan)
    if name in ("lqr", "lqrm"):
        policy = build_tracking_policy(plan, rc, robust=(name == "lqrm"))
        return lambda: _PolicyController(plan, policy, model)
    if name == "nmpc":
        pen = rc.penalties()
        Q = pen.Q_delta + pen.Q
        QT = pen.QT_scale * pen.Q_delta + pen.Q
        R = pen.R_delta + pen.R

        def factory():
            return trajopt.NmpcTracker(plan.means, plan.inputs, rc.nmpc_horizon(),
                                       Q, QT, R, model, env.bounds, rc.nlp(),
                                       rc.nmpc_max_iter())
        return factory
    raise ValueError(f"unknown controller {name!r}")


def run_trial(plan: Plan, controller, noise_seq, env: Environment,
              rc: RunConfig, trial=0, noise_var=0.0, seed=0, name=""):
    """Simulate one noise realization; returns the metrics row."""
    model = rc.model()
    pen = rc.penalties()
    Q = pen.Q_delta
    QT = pen.QT_scale * pen.Q_delta
    R = pen.R

    T = plan.steps
    x = plan.means[0].copy()
    dx_cost = 0.0
    u_cost = 0.0
    collided = False
    collision_step = None
    t0 = time.perf_counter()
    for k in range(T):
        u = controller.control(k, x)
        x = dynamics.step(x, u, noise_seq[k], model)
        u_cost += float(u @ R @ u)
        dev = x - plan.means[k + 1]
        dx_cost += float(dev @ (QT if k + 1 == T else Q) @ dev)
        if not geometry.deterministic_point_check(x, env):
            collided = True
            collision_step = k + 1
            break
    runtime = time.perf_counter() - t0
    reached = (not collided) and env.in_goal(x)
    return TrialResult(trial, name, noise_var, collided, collision_step,
                       dx_cost, u_cost, runtime, reached, seed,
                       getattr(controller, "failures", 0))


def run_sweep(plan: Plan, spec: SweepSpec, env: Environment, rc: RunConfig):
    """All (noise level, controller, trial) combinations, in deterministic order."""
    results = []
    factories = {name: make_controller_factory(name, plan, env, rc)
                 for name in spec.controllers}
    for var in spec.noise_vars:
        noise_seqs = {}
        for trial in range(spec.trials):
            seed = spec.base_seed + trial
            model = rc.noise(var=var, seed=seed)
            noise_seqs[trial] = dynamics.sample_noise(model, plan.steps)
        for name in spec.controllers:
            for trial in range(spec.trials):
                seed = spec.base_seed + trial
                res = run_trial(plan, factories[name](), noise_seqs[trial], env,
                                rc, trial=trial, noise_var=var, seed=seed,
                                name=name)
                results.append(res)
    return results


def results_to_csv(results, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in results:
        writer.writerow([
            r.trial, r.controller, repr(r.noise_var), int(r.collided),
            "" if r.collision_step is None else r.collision_step,
            repr(r.dx_cost), repr(r.u_cost), f"{r.runtime_s:.6f}",
            int(r.reached_goal), r.seed,
        ])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


def summarize(results):
    """Failure counts and conditional means over collision-free trials."""
    keys = sorted({(r.controller, r.noise_var) for r in results},
                  key=lambda t: (t[1], CONTROLLERS.index(t[0])))
    rows = []
    for name, var in keys:
        group = [r for r in results if r.controller == name and r.noise_var == var]
        free = [r for r in group if not r.collided]
        rows.append({
            "controller": name,
            "noise_var": var,
            "trials": len(group),
            "failures": sum(r.collided for r in group),
            "reached_goal": sum(r.reached_goal for r in group),
            "dx_cost": float(np.mean([r.dx_cost for r in free])) if free else float("nan"),
            "u_cost": float(np.mean([r.u_cost for r in free])) if free else float("nan"),
            "runtime_s": float(np.mean([r.runtime_s for r in free])) if free else float("nan"),
        })
    return rows
