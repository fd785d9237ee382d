import numpy as np
import pytest

from riskplan import dynamics
from riskplan.dynamics import ModelParams
from riskplan.glq import (GlqError, GlqStage, GlqTerminal, RobustnessSpec,
                          TrackingPenalties, apply_policy, build_tracking_stages,
                          heading_patterns, solve_glq)
from riskplan.trajopt import NlpConfig, SteeringProblem, solve_steering


def riccati_oracle(As, Bs, Qs, Rs, QT):
    """Standard time-varying finite-horizon recursion, written independently."""
    T = len(As)
    P = QT.copy()
    Ks = [None] * T
    for k in range(T - 1, -1, -1):
        A, B, Q, R = As[k], Bs[k], Qs[k], Rs[k]
        Ks[k] = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ A + A.T @ P @ B @ Ks[k]
        P = 0.5 * (P + P.T)
    return Ks


def regulator_stages(As, Bs, Qs, Rs):
    stages = []
    for A, B, Q, R in zip(As, Bs, Qs, Rs):
        n, m = B.shape
        G = np.zeros((n + m, n + m))
        G[:n, :n] = Q
        G[n:, n:] = R
        stages.append(GlqStage(A, B, G))
    return stages


def random_spd(rng, n, scale=1.0):
    M = rng.normal(size=(n, n))
    return scale * (M @ M.T + n * np.eye(n))


def test_scalar_one_step():
    G = np.array([[1.0, 0.0], [0.0, 1.0]])
    pol = solve_glq([GlqStage(np.eye(1), np.eye(1), G)], GlqTerminal(np.eye(1)))
    assert pol.K_u[0][0, 0] == pytest.approx(-0.5, abs=1e-14)


def test_scalar_one_step_with_input_noise():
    G = np.array([[1.0, 0.0], [0.0, 1.0]])
    st = GlqStage(np.eye(1), np.eye(1), G, b_patterns=[(np.eye(1), 1.0)])
    pol = solve_glq([st], GlqTerminal(np.eye(1)))
    assert pol.K_u[0][0, 0] == pytest.approx(-1.0 / 3.0, abs=1e-14)


def test_matches_riccati_oracle():
    rng = np.random.default_rng(21)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 3))
        T = int(rng.integers(1, 21))
        As = [rng.normal(size=(n, n)) * 0.9 for _ in range(T)]
        Bs = [rng.normal(size=(n, m)) for _ in range(T)]
        Qs = [random_spd(rng, n, 0.5) for _ in range(T)]
        Rs = [random_spd(rng, m, 0.5) for _ in range(T)]
        QT = random_spd(rng, n)
        pol = solve_glq(regulator_stages(As, Bs, Qs, Rs), GlqTerminal(QT))
        Ks = riccati_oracle(As, Bs, Qs, Rs, QT)
        for k in range(T):
            assert np.max(np.abs(pol.K_u[k] - Ks[k])) <= 1e-8


def test_cost_to_go_matches_monte_carlo():
    rng = np.random.default_rng(5)
    n, m, T = 2, 1, 4
    As = [rng.normal(size=(n, n)) * 0.8 for _ in range(T)]
    Bs = [rng.normal(size=(n, m)) for _ in range(T)]
    Qs = [random_spd(rng, n, 0.3) for _ in range(T)]
    Rs = [random_spd(rng, m, 0.3) for _ in range(T)]
    QT = random_spd(rng, n)
    W = 0.01 * np.eye(n)
    stages = regulator_stages(As, Bs, Qs, Rs)
    for st in stages:
        st.E = np.eye(n)
        st.W = W
    pol = solve_glq(stages, GlqTerminal(QT))

    x0 = np.array([0.7, -0.4])
    trials = 100_000
    xs = np.tile(x0, (trials, 1))
    total = np.zeros(trials)
    for k in range(T):
        us = xs @ pol.K_u[k].T + pol.e_u[k]
        total += np.einsum("ti,ij,tj->t", xs, Qs[k], xs)
        total += np.einsum("ti,ij,tj->t", us, Rs[k], us)
        w = rng.multivariate_normal(np.zeros(n), W, size=trials)
        xs = xs @ As[k].T + us @ Bs[k].T + w
    total += np.einsum("ti,ij,tj->t", xs, QT, xs)
    predicted = float(x0 @ pol.P[0] @ x0 + 2 * pol.q[0] @ x0 + pol.r[0])
    se = total.std() / np.sqrt(trials)
    assert abs(total.mean() - predicted) <= 3 * se


def test_policy_independent_of_additive_noise():
    rng = np.random.default_rng(9)
    n, m, T = 3, 2, 6
    As = [rng.normal(size=(n, n)) for _ in range(T)]
    Bs = [rng.normal(size=(n, m)) for _ in range(T)]
    Qs = [random_spd(rng, n) for _ in range(T)]
    Rs = [random_spd(rng, m) for _ in range(T)]
    QT = random_spd(rng, n)
    s1 = regulator_stages(As, Bs, Qs, Rs)
    s2 = regulator_stages(As, Bs, Qs, Rs)
    for st in s2:
        st.W = 17.0 * np.eye(n)
    p1 = solve_glq(s1, GlqTerminal(QT))
    p2 = solve_glq(s2, GlqTerminal(QT))
    for k in range(T):
        assert np.array_equal(p1.K_u[k], p2.K_u[k])
        assert np.array_equal(p1.L_u[k], p2.L_u[k])
        assert np.array_equal(p1.e_u[k], p2.e_u[k])
    assert p1.r[0] != p2.r[0]  # the scalar cost does see the noise


def test_adversary_channel_weakens_with_penalty():
    # one-step scalar game: large S gives the plain LQR gain, small S shifts it
    A = np.eye(1); B = np.eye(1); C = np.eye(1)
    G_big = np.zeros((3, 3)); G_big[0, 0] = 1.0; G_big[1, 1] = 1.0; G_big[2, 2] = -100.0
    G_small = G_big.copy(); G_small[2, 2] = -2.0
    pol_big = solve_glq([GlqStage(A, B, G_big, C=C)], GlqTerminal(np.eye(1)))
    pol_small = solve_glq([GlqStage(A, B, G_small, C=C)], GlqTerminal(np.eye(1)))
    assert pol_big.K_u[0][0, 0] == pytest.approx(-0.5, abs=0.01)
    assert abs(pol_small.K_u[0][0, 0]) > abs(pol_big.K_u[0][0, 0])


def test_adversary_requires_negative_definite_hvv():
    A = np.eye(1); B = np.eye(1); C = np.eye(1)
    G = np.zeros((3, 3)); G[0, 0] = 1.0; G[1, 1] = 1.0; G[2, 2] = -0.5
    with pytest.raises(GlqError, match="H_vv"):
        solve_glq([GlqStage(A, B, G, C=C)], GlqTerminal(np.eye(1)))


def test_huu_singular_diagnostic_names_step():
    A = np.eye(1); B = np.eye(1)
    G = np.zeros((2, 2)); G[0, 0] = 1.0; G[1, 1] = -2.0  # indefinite in u
    with pytest.raises(GlqError, match="step 0"):
        solve_glq([GlqStage(A, B, G)], GlqTerminal(np.zeros((1, 1))))


# -- tracking instantiation --------------------------------------------------

@pytest.fixture
def reference(model):
    res = solve_steering(SteeringProblem([0, 0, 0], [1.2, 0.6, 0.5], 30,
                                         np.eye(2), model), NlpConfig(mu0=1000.0))
    assert res.ok
    return res.states, res.inputs


def default_penalties():
    return TrackingPenalties(Q=np.zeros((3, 3)), R=np.eye(2),
                             Q_delta=np.diag([100.0, 100.0, 10.0]),
                             R_delta=np.zeros((2, 2)), QT_scale=10.0)


def test_tracking_stage_blocks(model, reference):
    refs, refu = reference
    pen = default_penalties()
    stages, term = build_tracking_stages(refs, refu, pen, model)
    st = stages[3]
    n, m, c, p = st.sizes
    assert (n, m, c, p) == (3, 2, 0, 5)
    A, B, E = dynamics.jacobians(refs[3], refu[3], model)
    assert np.allclose(st.A, A) and np.allclose(st.B, B)
    G = st.G
    assert np.allclose(G[:3, :3], pen.Q_delta + pen.Q)
    assert np.allclose(G[3:5, 3:5], pen.R_delta + pen.R)
    assert np.allclose(G[:3, 5:8], pen.Q)
    assert np.allclose(G[3:5, 8:10], pen.R)
    assert np.allclose(G[5:8, 5:8], pen.Q)
    assert np.allclose(G[8:10, 8:10], pen.R)
    assert np.allclose(st.z, np.concatenate([refs[3], refu[3]]))
    assert np.allclose(term.G_xx, 10.0 * pen.Q_delta + pen.Q)


def test_tracking_rejects_inconsistent_reference(model, reference):
    refs, refu = reference
    bad = refs.copy()
    bad[5] += 0.01
    with pytest.raises(ValueError, match="consistent"):
        build_tracking_stages(bad, refu, default_penalties(), model)


def test_lqr_equals_riccati_on_deviations(model, reference):
    # no robustness spec: gains must match the plain deviation Riccati recursion
    refs, refu = reference
    pen = default_penalties()
    stages, term = build_tracking_stages(refs, refu, pen, model)
    pol = solve_glq(stages, term)
    T = refu.shape[0]
    As, Bs = [], []
    for k in range(T):
        A, B, _ = dynamics.jacobians(refs[k], refu[k], model)
        As.append(A); Bs.append(B)
    Ks = riccati_oracle(As, Bs, [pen.Q_delta] * T, [pen.R] * T, 10.0 * pen.Q_delta)
    for k in range(T):
        assert np.max(np.abs(pol.K_u[k] - Ks[k])) <= 1e-8


def test_heading_pattern_values(model):
    a_pat, b_pat = heading_patterns(0.0, 0.5, model, RobustnessSpec(np.pi / 2))
    (A1, vA1), (A2, vA2) = a_pat
    (B1, vB1), (B2, vB2) = b_pat
    assert vA1 == pytest.approx(0.1 ** 2)
    assert vA2 == pytest.approx(0.1 ** 2)
    assert vB1 == pytest.approx(1.0)
    assert vB2 == pytest.approx(1.0)
    assert np.allclose(A1, [[0, 0, 0], [0, 0, 1], [0, 0, 0]])
    assert np.allclose(B1, model.dt * np.array([[0, 0], [1, 0], [0, 0]]))


def test_zero_speed_kills_a_variances(model):
    a_pat, _ = heading_patterns(0.3, 0.0, model, RobustnessSpec(np.pi / 4))
    assert a_pat[0][1] == 0.0 and a_pat[1][1] == 0.0


def test_lqrm_converges_to_lqr_as_dtheta_vanishes(model, reference):
    refs, refu = reference
    pen = default_penalties()
    stages0, term = build_tracking_stages(refs, refu, pen, model)
    pol0 = solve_glq(stages0, term)
    stages1, _ = build_tracking_stages(refs, refu, pen, model,
                                       spec=RobustnessSpec(1e-4))
    pol1 = solve_glq(stages1, term)
    for k in range(refu.shape[0]):
        assert np.max(np.abs(pol0.K_u[k] - pol1.K_u[k])) <= 1e-6


def test_robustness_regularization_monotone(model, reference):
    refs, refu = reference
    pen = default_penalties()
    P = np.diag([5.0, 4.0, 3.0])
    prev = np.zeros((2, 2))
    for d in (0.1, 0.3, 0.6, 1.0, np.pi / 2):
        _, b_pat = heading_patterns(0.4, 0.5, model, RobustnessSpec(d))
        term_now = sum(v * (M.T @ P @ M) for M, v in b_pat)
        diff = term_now - prev
        assert np.min(np.linalg.eigvalsh(diff)) >= -1e-12
        prev = term_now


def test_gains_bounded_across_dtheta_sweep(model, reference):
    refs, refu = reference
    pen = default_penalties()
    for d in (0.1, 0.5, 1.0, np.pi / 2):
        stages, term = build_tracking_stages(refs, refu, pen, model,
                                             spec=RobustnessSpec(d))
        pol = solve_glq(stages, term)
        assert all(np.all(np.isfinite(K)) for K in pol.K_u)
        assert max(np.max(np.abs(K)) for K in pol.K_u) < 1e3


def test_apply_policy_forms(model, reference):
    refs, refu = reference
    pen = default_penalties()
    stages, term = build_tracking_stages(refs, refu, pen, model)
    pol = solve_glq(stages, term)

    # pure open loop when all gains vanish
    pol.K_u[0] = np.zeros((2, 3)); pol.L_u[0] = np.zeros((2, 5)); pol.e_u[0] = np.zeros(2)
    u = apply_policy(pol, 0, refs[0], refs[0], refu[0], model)
    assert np.allclose(u, refu[0])

    # linear response before clipping
    stages, term = build_tracking_stages(refs, refu, pen, model)
    pol = solve_glq(stages, term)
    delta = np.array([1e-3, -2e-3, 5e-4])
    u0 = apply_policy(pol, 4, refs[4], refs[4], refu[4], model)
    u1 = apply_policy(pol, 4, refs[4] + delta, refs[4], refu[4], model)
    assert np.allclose(u1 - u0, pol.K_u[4] @ delta, atol=1e-12)


def test_apply_policy_clips(model, reference):
    refs, refu = reference
    pen = default_penalties()
    stages, term = build_tracking_stages(refs, refu, pen, model)
    pol = solve_glq(stages, term)
    u = apply_policy(pol, 0, refs[0] + np.array([5.0, 5.0, 0.0]), refs[0],
                     refu[0], model)
    assert np.all(np.abs(u) <= [model.v_max, model.omega_max])


def test_zero_noise_rollout_stays_near_reference(model, reference):
    refs, refu = reference
    pen = default_penalties()
    stages, term = build_tracking_stages(refs, refu, pen, model)
    pol = solve_glq(stages, term)
    x = refs[0].copy()
    worst = 0.0
    for k in range(refu.shape[0]):
        u = apply_policy(pol, k, x, refs[k], refu[k], model)
        x = dynamics.step(x, u, np.zeros(3), model)
        worst = max(worst, float(np.linalg.norm(x - refs[k + 1])))
    assert worst <= 1e-2
