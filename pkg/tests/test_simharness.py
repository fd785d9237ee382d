import csv
import io

import numpy as np
import pytest

from conftest import make_env
from riskplan import dynamics, geometry
from riskplan.config import load_config
from riskplan.planner import PlannerConfig, extract_plan, grow_tree, shorten_plan
from riskplan.simharness import (CSV_COLUMNS, SweepSpec, make_controller_factory,
                                 results_to_csv, run_sweep, run_trial, summarize)
from riskplan.unscented import UtParams

RC = load_config()
MODEL = RC.model()


@pytest.fixture(scope="module")
def setup():
    env = make_env(obstacles=[(4.0, 6.0, 3.0, 6.5)], goal=(8.0, 9.5, 0.5, 2.0))
    cfg = PlannerConfig(num_samples=120, steer_horizon=20, max_step_distance=1.2,
                        seed=1, headroom=0.9)
    tree = grow_tree(env, cfg, env.budget(), MODEL, UtParams(), RC.w_cov(),
                     RC.nlp())
    plan = extract_plan(tree, env)
    plan = shorten_plan(plan, env, env.budget(), cfg, MODEL, UtParams(),
                        RC.w_cov(), RC.nlp())
    return env, plan


def exact_rollout_plan(plan):
    """Defect-free twin: means re-simulated exactly from the inputs."""
    from riskplan.planner import Plan
    means = plan.means.copy()
    for k in range(plan.steps):
        means[k + 1] = dynamics.step(means[k], plan.inputs[k], np.zeros(3), MODEL)
    return Plan(means, plan.covs.copy(), plan.inputs.copy(), plan.seg.copy())


def test_open_loop_zero_noise_replays_reference(setup):
    env, plan = setup
    exact = exact_rollout_plan(plan)
    factory = make_controller_factory("openloop", exact, env, RC)
    noise = np.zeros((exact.steps, 3))
    res = run_trial(exact, factory(), noise, env, RC, name="openloop")
    assert not res.collided
    assert res.dx_cost <= 1e-9
    assert res.reached_goal


def test_open_loop_with_solver_tolerance_defects(setup):
    # the stored plan carries defects up to 1e-6 per step, so the replay
    # accumulates a tiny but nonzero deviation cost
    env, plan = setup
    factory = make_controller_factory("openloop", plan, env, RC)
    res = run_trial(plan, factory(), np.zeros((plan.steps, 3)), env, RC,
                    name="openloop")
    assert not res.collided
    assert res.dx_cost <= 1e-4


def test_metric_accounting_independent_recompute(setup):
    env, plan = setup
    factory = make_controller_factory("lqr", plan, env, RC)
    seqs = dynamics.sample_noise(RC.noise(var=1e-5, seed=7), plan.steps)
    controller = factory()
    res = run_trial(plan, controller, seqs, env, RC, name="lqr", noise_var=1e-5)

    # replay independently, accumulating the metrics from the logged stream
    pen = RC.penalties()
    x = plan.means[0].copy()
    dx_cost = 0.0
    u_cost = 0.0
    controller2 = factory()
    for k in range(plan.steps):
        u = controller2.control(k, x)
        x = dynamics.step(x, u, seqs[k], MODEL)
        u_cost += float(u @ pen.R @ u)
        dev = x - plan.means[k + 1]
        Qk = pen.QT_scale * pen.Q_delta if k + 1 == plan.steps else pen.Q_delta
        dx_cost += float(dev @ Qk @ dev)
        if not geometry.deterministic_point_check(x, env):
            break
    assert res.dx_cost == pytest.approx(dx_cost, abs=1e-9)
    assert res.u_cost == pytest.approx(u_cost, abs=1e-9)


def test_collision_uses_deterministic_check(setup):
    env, plan = setup
    # plant a huge kick straight into the obstacle midway
    exact = exact_rollout_plan(plan)
    factory = make_controller_factory("openloop", exact, env, RC)
    noise = np.zeros((exact.steps, 3))
    k_mid = exact.steps // 2
    target = np.array([5.0, 4.0])  # strictly inside the obstacle
    delta = (target - exact.means[k_mid + 1][:2]) / MODEL.dt
    noise[k_mid, :2] = delta
    res = run_trial(exact, factory(), noise, env, RC, name="openloop")
    assert res.collided
    assert res.collision_step == k_mid + 1
    assert not res.reached_goal


def test_run_trial_runtime_positive(setup):
    env, plan = setup
    factory = make_controller_factory("lqrm", plan, env, RC)
    res = run_trial(plan, factory(), np.zeros((plan.steps, 3)), env, RC, name="lqrm")
    assert res.runtime_s > 0.0


def test_sweep_determinism(setup):
    env, plan = setup
    spec = SweepSpec([5e-7], trials=2, controllers=["openloop", "lqr"], base_seed=3)
    r1 = run_sweep(plan, spec, env, RC)
    r2 = run_sweep(plan, spec, env, RC)
    for a, b in zip(r1, r2):
        assert (a.trial, a.controller, a.collided, a.dx_cost, a.u_cost, a.seed) == \
            (b.trial, b.controller, b.collided, b.dx_cost, b.u_cost, b.seed)


def test_shared_seed_pairing(setup):
    env, plan = setup
    spec = SweepSpec([1e-4], trials=3, controllers=["openloop", "lqr"], base_seed=11)
    rows = run_sweep(plan, spec, env, RC)
    by = {(r.controller, r.trial): r for r in rows}
    for t in range(3):
        assert by[("openloop", t)].seed == by[("lqr", t)].seed


def test_open_loop_u_cost_constant_across_noise(setup):
    env, plan = setup
    spec = SweepSpec([5e-7, 1e-4], trials=3, controllers=["openloop"], base_seed=0)
    rows = run_sweep(plan, spec, env, RC)
    costs = {round(r.u_cost, 12) for r in rows if not r.collided}
    assert len(costs) == 1


def test_csv_schema_and_order(setup, tmp_path):
    env, plan = setup
    spec = SweepSpec([5e-7], trials=2, controllers=["lqr", "openloop"], base_seed=0)
    rows = run_sweep(plan, spec, env, RC)
    text = results_to_csv(rows, tmp_path / "r.csv")
    parsed = list(csv.reader(io.StringIO(text)))
    assert tuple(parsed[0]) == CSV_COLUMNS
    assert len(parsed) == 1 + len(rows)
    # rows appear controller-major in the requested order, trials inside
    assert [r[1] for r in parsed[1:]] == ["lqr", "lqr", "openloop", "openloop"]
    assert (tmp_path / "r.csv").read_text() == text


def test_summarize_conditional_averages(setup):
    env, plan = setup
    spec = SweepSpec([1e-3], trials=4, controllers=["openloop"], base_seed=2)
    rows = run_sweep(plan, spec, env, RC)
    summary = summarize(rows)[0]
    free = [r for r in rows if not r.collided]
    assert summary["trials"] == 4
    assert summary["failures"] == sum(r.collided for r in rows)
    if free:
        assert summary["dx_cost"] == pytest.approx(np.mean([r.dx_cost for r in free]))


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec([1e-4], trials=0)
    with pytest.raises(ValueError):
        SweepSpec([1e-4], trials=1, controllers=["bogus"])


def test_nmpc_controller_runs(setup):
    env, plan = setup
    factory = make_controller_factory("nmpc", plan, env, RC)
    noise = dynamics.sample_noise(RC.noise(var=5e-7, seed=1), plan.steps)
    res = run_trial(plan, factory(), noise, env, RC, name="nmpc", noise_var=5e-7)
    assert not res.collided
    assert res.dx_cost < 100.0
