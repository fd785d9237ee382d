import json

import numpy as np
import pytest

from conftest import make_env
from riskplan.geometry import (EnvironmentFormatError, InvalidCovariance,
                               Polytope, RiskBudget, deterministic_point_check,
                               dr_padding, dr_point_check, load_environment,
                               min_obstacle_clearance, point_polygon_distance,
                               psd_factor, rect_polytope)


def random_psd(rng, scale=1.0):
    M = rng.normal(size=(3, 3))
    return scale * (M @ M.T)


def random_env(rng):
    obstacles = []
    for _ in range(rng.integers(1, 4)):
        x0, y0 = rng.uniform(1, 7, 2)
        obstacles.append((x0, x0 + rng.uniform(0.5, 2.0), y0, y0 + rng.uniform(0.5, 2.0)))
    start = (0.2, 0.2, 0.0)
    if any(o[0] <= start[0] <= o[1] and o[2] <= start[1] <= o[3] for o in obstacles):
        obstacles = [(5, 6, 5, 6)]
    return make_env(obstacles=obstacles, start=start, goal=(9.0, 9.8, 9.0, 9.8))


# -- padding ---------------------------------------------------------------

def test_padding_alpha_half():
    assert dr_padding([1, 0, 0], np.eye(3), 0.5) == pytest.approx(1.0, abs=1e-12)


def test_padding_alpha_tenth():
    assert dr_padding([1, 0, 0], np.eye(3), 0.1) == pytest.approx(3.0, abs=1e-12)


def test_padding_matches_quadratic_form_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a = rng.normal(size=3)
        sigma = random_psd(rng)
        alpha = rng.uniform(1e-4, 0.5)
        oracle = np.sqrt((1 - alpha) / alpha) * np.sqrt(a @ sigma @ a)
        assert dr_padding(a, sigma, alpha) == pytest.approx(oracle, rel=1e-10)


def test_padding_zero_covariance():
    rng = np.random.default_rng(1)
    for _ in range(10):
        assert dr_padding(rng.normal(size=3), np.zeros((3, 3)), rng.uniform(0.01, 0.5)) == 0.0


def test_padding_scalings():
    rng = np.random.default_rng(2)
    a = rng.normal(size=3)
    sigma = random_psd(rng)
    base = dr_padding(a, sigma, 0.2)
    assert dr_padding(a, 4.0 * sigma, 0.2) == pytest.approx(2.0 * base, rel=1e-12)
    assert dr_padding(3.0 * a, sigma, 0.2) == pytest.approx(3.0 * base, rel=1e-12)


def test_padding_rejects_indefinite_covariance():
    bad = np.diag([1.0, -1e-3, 1.0])
    with pytest.raises(InvalidCovariance):
        dr_padding([1, 0, 0], bad, 0.1)


def test_psd_factor_clamps_rounding_negatives():
    sigma = np.diag([1.0, -5e-11, 0.0])
    S = psd_factor(sigma)
    assert np.allclose(S @ S.T, np.diag([1.0, 0.0, 0.0]), atol=1e-9)


# -- point checks ----------------------------------------------------------

def test_obstacle_center_is_unsafe(one_obstacle_env):
    assert not deterministic_point_check([5.0, 5.0, 0.0], one_obstacle_env)


def test_start_is_safe(one_obstacle_env):
    assert deterministic_point_check(one_obstacle_env.start, one_obstacle_env)


def test_outside_bounds_is_unsafe(one_obstacle_env):
    assert not deterministic_point_check([-0.1, 5.0, 0.0], one_obstacle_env)


def test_dr_equals_deterministic_at_zero_covariance():
    rng = np.random.default_rng(4)
    for _ in range(20):
        env = random_env(rng)
        budget = env.budget()
        for _ in range(50):
            s = np.array([rng.uniform(-1, 11), rng.uniform(-1, 11), rng.uniform(-4, 4)])
            assert dr_point_check(s, np.zeros((3, 3)), env, budget) == \
                deterministic_point_check(s, env)


def test_dr_one_dimensional_reduction(one_obstacle_env):
    # mean at distance d left of the obstacle face x = 4 with isotropic sigma:
    # safe for that obstacle iff d >= 3 sigma at alpha' = 0.1
    env = one_obstacle_env
    budget = RiskBudget(0.1, 0, 1)  # alpha_step = 0.1, one face share
    assert budget.alpha_face == pytest.approx(0.1)
    sig = 0.05
    sigma = sig ** 2 * np.eye(3)
    d_crit = 3.0 * sig
    safe = dr_point_check([4.0 - d_crit - 1e-6, 5.0, 0.0], sigma, env, budget)
    unsafe = dr_point_check([4.0 - d_crit + 1e-3, 5.0, 0.0], sigma, env, budget)
    assert safe and not unsafe


def test_corridor_narrower_than_twice_padding_is_unsafe():
    alpha = 0.1
    sig = 0.05
    pad = np.sqrt((1 - alpha) / alpha) * sig
    width = 2 * pad * 0.9
    env = load_environment({
        "bounds": [{"a": [0, 1, 0], "b": 5.0 + width / 2},
                   {"a": [0, -1, 0], "b": -(5.0 - width / 2)},
                   {"a": [1, 0, 0], "b": 10.0},
                   {"a": [-1, 0, 0], "b": 0.0}],
        "obstacles": [],
        "goal": {"rect": [9, 9.5, 4.99, 5.01]},
        "start": [0.5, 5.0, 0.0],
    })
    budget = RiskBudget(alpha * (0 + 1), 0, env.n_total)
    sigma = sig ** 2 * np.eye(3)
    # alpha_face = alpha / 4; padding grows, corridor is sized against the
    # per-face risk, so tighten the width accordingly
    pad_face = np.sqrt((1 - budget.alpha_face) / budget.alpha_face) * sig
    assert width < 2 * pad_face
    rng = np.random.default_rng(0)
    for _ in range(50):
        mean = [rng.uniform(0, 10), rng.uniform(5 - width / 2, 5 + width / 2), 0.0]
        assert not dr_point_check(mean, sigma, env, budget)


def test_psd_monotonicity_of_verdicts():
    rng = np.random.default_rng(5)
    for _ in range(15):
        env = random_env(rng)
        budget = env.budget()
        for _ in range(30):
            mean = np.array([rng.uniform(0, 10), rng.uniform(0, 10), 0.0])
            s1 = random_psd(rng, scale=rng.uniform(0, 5e-3))
            v = rng.normal(size=3)
            s2 = s1 + np.outer(v, v) * rng.uniform(0, 5e-3)
            if dr_point_check(mean, s2, env, budget):
                assert dr_point_check(mean, s1, env, budget)


def test_risk_budget_arithmetic():
    budget = RiskBudget(0.1, 1000, 24)
    assert budget.alpha_step * (budget.t_max + 1) == pytest.approx(0.1, rel=1e-15)
    assert budget.alpha_face * budget.n_total == pytest.approx(budget.alpha_step, rel=1e-15)


def test_risk_budget_validation():
    with pytest.raises(ValueError):
        RiskBudget(0.6, 1000, 24)
    with pytest.raises(ValueError):
        RiskBudget(0.1, 1000, 0)


# -- clearance helpers -------------------------------------------------------

def test_point_polygon_distance():
    poly = rect_polytope(2, 4, 2, 4)
    assert point_polygon_distance([1.0, 3.0], poly) == pytest.approx(1.0)
    assert point_polygon_distance([3.0, 3.0], poly) == 0.0
    assert point_polygon_distance([5.0, 5.0], poly) == pytest.approx(np.sqrt(2))


def test_min_obstacle_clearance(one_obstacle_env):
    states = np.array([[3.0, 5.0, 0.0], [2.0, 5.0, 1.0]])
    assert min_obstacle_clearance(states, one_obstacle_env) == pytest.approx(1.0)


# -- environment loading -----------------------------------------------------

def test_loader_roundtrip(tmp_path):
    path = tmp_path / "env.json"
    path.write_text(json.dumps({
        "bounds": {"rect": [0, 10, 0, 10]},
        "obstacles": [{"rect": [3, 4, 3, 4]},
                      [{"a": [1, 0, 0], "b": 8.0},
                       {"a": [-1, 0, 0], "b": -7.0},
                       {"a": [0, 1, 0], "b": 2.0},
                       {"a": [0, -1, 0], "b": -1.0}]],
        "goal": {"rect": [8, 9, 8, 9]},
        "start": [1, 1, 0],
        "risk": {"beta": 0.2, "t_max": 500},
    }))
    env = load_environment(str(path))
    assert env.n_total == 4 + 4 + 4
    assert env.risk_beta == 0.2
    assert env.budget().t_max == 500
    assert env.bounds.contains(np.array([5, 5, 0.0]))


@pytest.mark.parametrize("mutate, fragment", [
    (lambda e: e.pop("bounds"), "bounds"),
    (lambda e: e.update(start=[20, 5, 0]), "start"),
    (lambda e: e.update(goal={"rect": [9, 20, 9, 9.5]}), "goal"),
    (lambda e: e.update(obstacles=[{"rect": [0.5, 2, 0.5, 2]}]), "obstacles[0]"),
    (lambda e: e.update(obstacles=[[{"a": [0, 0, 0], "b": 1}]]), "obstacles[0][0].a"),
    (lambda e: e.update(extra=1), "extra"),
    (lambda e: e.update(risk={"beta": 0.9, "t_max": 10}), "risk"),
])
def test_loader_reports_first_violation(mutate, fragment):
    raw = {
        "bounds": {"rect": [0, 10, 0, 10]},
        "obstacles": [],
        "goal": {"rect": [8, 9, 8, 9]},
        "start": [1, 1, 0],
    }
    mutate(raw)
    with pytest.raises(EnvironmentFormatError) as err:
        load_environment(raw)
    assert fragment in str(err.value)


def test_unbounded_obstacle_rejected():
    with pytest.raises(EnvironmentFormatError):
        load_environment({
            "bounds": {"rect": [0, 10, 0, 10]},
            "obstacles": [[{"a": [1, 0, 0], "b": 5.0}]],
            "goal": {"rect": [8, 9, 8, 9]},
            "start": [1, 1, 0],
        })


def test_theta_normals_supported_in_checks():
    # the math accepts halfspaces over heading even though shipped files are planar
    budget = RiskBudget(0.1, 0, 1)
    pad = dr_padding([0, 0, 1], np.diag([0, 0, 0.04]), budget.alpha_face)
    assert pad == pytest.approx(np.sqrt((1 - budget.alpha_face) / budget.alpha_face) * 0.2)
