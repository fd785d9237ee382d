"""Command-line entry point: plan, shorten, sweep, validate.

Exit codes: 0 success, 2 configuration or input error, 3 goal unreachable,
4 plan validation failure.  Errors are emitted as one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import geometry, planner, simharness
from .config import ConfigError, load_config
from .geometry import EnvironmentFormatError, load_environment
from .planner import GoalUnreached

EXIT_CONFIG = 2
EXIT_UNREACHED = 3
EXIT_INVALID = 4


def _fail(code, message):
    print(json.dumps({"error": message, "code": code}), file=sys.stderr)
    raise SystemExit(code)


def _load(args):
    try:
        rc = load_config(getattr(args, "config", None))
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        _fail(EXIT_CONFIG, f"config: {e}")
    try:
        env = load_environment(args.env)
    except (EnvironmentFormatError, OSError, json.JSONDecodeError) as e:
        _fail(EXIT_CONFIG, f"environment: {e}")
    return rc, env


def cmd_plan(args):
    rc, env = _load(args)
    cfg = rc.planner(seed=args.seed, samples=args.samples)
    budget = env.budget()
    try:
        tree = planner.grow_tree(env, cfg, budget, rc.model(), rc.ut(),
                                 rc.w_cov(), rc.nlp(), use_dr=not args.no_dr)
    except ValueError as e:
        _fail(EXIT_CONFIG, str(e))
    if args.dump_tree:
        _dump_tree(tree, args.dump_tree)
    try:
        plan = planner.extract_plan(tree, env)
    except GoalUnreached as e:
        _fail(EXIT_UNREACHED, str(e))
    planner.save_plan(plan, args.out)
    print(f"plan: {plan.steps} steps over {plan.seg[-1] + 1} segments, "
          f"{len(tree)} tree nodes -> {args.out}")
    return 0


def _dump_tree(tree, path):
    data = {
        "nodes": [{"id": n.id,
                   "mean": [float(v) for v in n.mean],
                   "parent": n.parent,
                   "cost": float(n.cost_from_root)} for n in tree.nodes],
        "edges": [{"child": n.id,
                   "polyline": [[float(x), float(y)] for x, y in n.edge.means[:, :2]]}
                  for n in tree.nodes if n.edge is not None],
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=1, sort_keys=True)
        f.write("\n")


def cmd_shorten(args):
    rc, env = _load(args)
    try:
        plan = planner.load_plan(args.plan)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        _fail(EXIT_CONFIG, f"plan: {e}")
    budget = env.budget()
    short = planner.shorten_plan(plan, env, budget, rc.planner(), rc.model(),
                                 rc.ut(), rc.w_cov(), rc.nlp(),
                                 use_dr=not args.no_dr)
    planner.save_plan(short, args.out)
    print(f"shorten: {plan.steps} -> {short.steps} steps -> {args.out}")
    return 0


def cmd_validate(args):
    rc, env = _load(args)
    try:
        plan = planner.load_plan(args.plan)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        _fail(EXIT_CONFIG, f"plan: {e}")
    problems = planner.validate_plan(plan, env, env.budget(), rc.model(),
                                     rc.ut(), rc.w_cov(),
                                     tol_defect=rc.nlp().tol_defect,
                                     use_dr=not args.no_dr)
    if problems:
        print(f"validate: FAIL ({problems[0]})")
        _fail(EXIT_INVALID, problems[0])
    print(f"validate: OK ({plan.steps} steps, {plan.seg[-1] + 1} segments)")
    return 0


def _parse_sweep_spec(args):
    try:
        controllers = [c.strip() for c in args.controllers.split(",") if c.strip()]
        noise_vars = [float(v) for v in args.noise.split(",") if v.strip()]
        return simharness.SweepSpec(noise_vars, args.trials, controllers, args.seed)
    except ValueError as e:
        _fail(EXIT_CONFIG, f"sweep flags: {e}")


def _sweep_chunk(payload):
    """Worker for one (controller, noise level) block of trials."""
    plan_path, env_path, raw_cfg, name, var, trials, base_seed = payload
    from .config import RunConfig
    rc = RunConfig(raw_cfg)
    env = load_environment(env_path)
    plan = planner.load_plan(plan_path)
    spec = simharness.SweepSpec([var], trials, [name], base_seed)
    return simharness.run_sweep(plan, spec, env, rc)


def cmd_sweep(args):
    rc, env = _load(args)
    spec = _parse_sweep_spec(args)
    try:
        plan = planner.load_plan(args.plan)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        _fail(EXIT_CONFIG, f"plan: {e}")
    jobs = args.jobs if args.jobs else os.cpu_count() or 1
    if jobs > 1 and len(spec.noise_vars) * len(spec.controllers) > 1:
        payloads = [(args.plan, args.env, rc.raw, name, var, spec.trials,
                     spec.base_seed)
                    for var in spec.noise_vars for name in spec.controllers]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_sweep_chunk, payloads))
        results = [r for chunk in chunks for r in chunk]
    else:
        results = simharness.run_sweep(plan, spec, env, rc)
    simharness.results_to_csv(results, args.out)
    print(f"sweep: {len(results)} trials -> {args.out}")
    print(f"{'controller':>10} {'noise_var':>10} {'fail':>5} {'goal':>5} "
          f"{'dx_cost':>12} {'u_cost':>12} {'runtime_s':>10}")
    for row in simharness.summarize(results):
        print(f"{row['controller']:>10} {row['noise_var']:>10g} "
              f"{row['failures']:>5d} {row['reached_goal']:>5d} "
              f"{row['dx_cost']:>12.4f} {row['u_cost']:>12.4f} "
              f"{row['runtime_s']:>10.4f}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="riskplan",
                                 description="risk-averse planning and tracking")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="grow a tree and extract the best plan")
    p.add_argument("--env", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-dr", action="store_true",
                   help="replace the tightened check with the deterministic one")
    p.add_argument("--dump-tree", default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("shorten", help="re-steer each plan segment with a minimal horizon")
    p.add_argument("--plan", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--no-dr", action="store_true")
    p.set_defaults(func=cmd_shorten)

    p = sub.add_parser("sweep", help="Monte Carlo trials over noise levels and controllers")
    p.add_argument("--plan", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--controllers", default="openloop,lqr,lqrm,nmpc")
    p.add_argument("--noise", required=True, help="comma-separated variances")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--jobs", type=int, default=0,
                   help="worker processes (default: machine parallelism)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="re-check a plan against an environment")
    p.add_argument("--plan", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--no-dr", action="store_true")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
