"""Finite-horizon generalized linear-quadratic dynamic game solver.

Solves, by backward dynamic programming, the game

    min_u max_v  E sum_k [x; u; v; z]^T G[k] [x; u; v; z]
    s.t.  x+ = (A + sum a_i A_i) x + (B + sum b_i B_i) u + (C + sum c_i C_i) v + E w

with zero-mean mutually independent scalar noises a_i, b_i, c_i of given
variances and additive noise w.  The cost-to-go stays quadratic,
J[k](x) = x^T P x + 2 q^T x + r, and the optimal input is affine,

    u[k] = K_u[k] x + L_u[k] z[k] + e_u[k].

The adversary channel is optional (c = 0 drops every v-coupled term).  The
tracking instantiations (plain time-varying LQR and the multiplicative-noise
robust variant) are built by `build_tracking_stages`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .dynamics import ModelParams

COND_WARN = 1e12


class GlqError(RuntimeError):
    pass


@dataclass
class GlqStage:
    """One step of problem data.  Pattern lists hold (matrix, variance) pairs."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray  # (n+m+c+p) x (n+m+c+p), symmetric
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    C: np.ndarray | None = None
    E: np.ndarray | None = None
    W: np.ndarray | None = None
    a_patterns: list = field(default_factory=list)
    b_patterns: list = field(default_factory=list)
    c_patterns: list = field(default_factory=list)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        n, m = self.A.shape[0], self.B.shape[1]
        if self.C is None:
            self.C = np.zeros((n, 0))
        self.C = np.asarray(self.C, dtype=float)
        if self.E is None:
            self.E = np.eye(n)
        if self.W is None:
            self.W = np.zeros((n, n))
        c, p = self.C.shape[1], self.z.size
        dim = n + m + c + p
        if self.G.shape != (dim, dim):
            raise ValueError(f"G must be {dim}x{dim} for sizes n={n} m={m} c={c} p={p}")
        if not np.allclose(self.G, self.G.T, atol=1e-12):
            raise ValueError("G must be symmetric")

    @property
    def sizes(self):
        return self.A.shape[0], self.B.shape[1], self.C.shape[1], self.z.size


@dataclass
class GlqTerminal:
    G_xx: np.ndarray
    G_xz: np.ndarray | None = None
    G_zz: np.ndarray | None = None
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.G_xx = np.asarray(self.G_xx, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        n, p = self.G_xx.shape[0], self.z.size
        if self.G_xz is None:
            self.G_xz = np.zeros((n, p))
        if self.G_zz is None:
            self.G_zz = np.zeros((p, p))


@dataclass
class GlqPolicy:
    K_u: list
    L_u: list
    e_u: list
    P: list
    q: list
    r: list


def _noise_term(patterns, P):
    out = 0.0
    for M, var in patterns:
        if var != 0.0:
            out = out + var * (M.T @ P @ M)
    return out


def _solve(M, rhs, what, k):
    if M.size == 0:
        return np.zeros((0,) + rhs.shape[1:]) if rhs.ndim > 1 else np.zeros(0)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond):
        raise GlqError(f"{what} is singular at step {k}")
    if cond > COND_WARN:
        warnings.warn(f"{what} is ill-conditioned at step {k} (cond={cond:.2e})",
                      RuntimeWarning, stacklevel=2)
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as e:
        raise GlqError(f"{what} is singular at step {k}: {e}") from None


def solve_glq(stages, terminal: GlqTerminal):
    """Backward dynamic-programming pass; returns the policy and cost pieces."""
    T = len(stages)
    n, m, c, p = stages[0].sizes if T else (terminal.G_xx.shape[0], 0, 0, 0)

    P = terminal.G_xx.copy()
    q = terminal.G_xz @ terminal.z if p else np.zeros(n)
    r = float(terminal.z @ terminal.G_zz @ terminal.z) if p else 0.0

    pol = GlqPolicy([None] * T, [None] * T, [None] * T,
                    [None] * (T + 1), [None] * (T + 1), [None] * (T + 1))
    pol.P[T], pol.q[T], pol.r[T] = P, q, r

    for k in range(T - 1, -1, -1):
        st = stages[k]
        n, m, c, p = st.sizes
        A, B, C, G, z = st.A, st.B, st.C, st.G, st.z
        ix, iu = slice(0, n), slice(n, n + m)
        iv, iz = slice(n + m, n + m + c), slice(n + m + c, n + m + c + p)

        M = np.hstack([A, B, C, np.zeros((n, p))])
        H = G + M.T @ P @ M
        H[ix, ix] += _noise_term(st.a_patterns, P)
        H[iu, iu] += _noise_term(st.b_patterns, P)
        if c:
            H[iv, iv] += _noise_term(st.c_patterns, P)

        Huu, Hux, Huz = H[iu, iu], H[iu, ix], H[iu, iz]
        if c:
            Hvv, Hvx, Hvz = H[iv, iv], H[iv, ix], H[iv, iz]
            Huv, Hvu = H[iu, iv], H[iv, iu]
            if np.max(np.linalg.eigvalsh(Hvv)) >= 0.0:
                raise GlqError(f"H_vv is not negative definite at step {k}; "
                               "adversary penalty too weak")
            if np.min(np.linalg.eigvalsh(Huu)) <= 0.0:
                raise GlqError(f"H_uu is not positive definite at step {k}")
            Hvv_i_vu = _solve(Hvv, Hvu, "H_vv", k)
            Hvv_i_vx = _solve(Hvv, Hvx, "H_vv", k)
            Hvv_i_vz = _solve(Hvv, Hvz, "H_vv", k)
            Hvv_i_Ctq = _solve(Hvv, C.T @ q, "H_vv", k)
            Mu = -Huu + Huv @ Hvv_i_vu
            K_u = _solve(Mu, Hux - Huv @ Hvv_i_vx, "reduced H_uu", k)
            L_u = _solve(Mu, Huz - Huv @ Hvv_i_vz, "reduced H_uu", k)
            e_u = _solve(Mu, B.T @ q + Huv @ Hvv_i_Ctq, "reduced H_uu", k)
            Huu_i_uv = _solve(Huu, Huv, "H_uu", k)
            Huu_i_ux = _solve(Huu, Hux, "H_uu", k)
            Huu_i_uz = _solve(Huu, Huz, "H_uu", k)
            Huu_i_Btq = _solve(Huu, B.T @ q, "H_uu", k)
            Mv = -Hvv + Hvu @ Huu_i_uv
            K_v = _solve(Mv, Hvx - Hvu @ Huu_i_ux, "reduced H_vv", k)
            L_v = _solve(Mv, Hvz - Hvu @ Huu_i_uz, "reduced H_vv", k)
            e_v = _solve(Mv, C.T @ q + Hvu @ Huu_i_Btq, "reduced H_vv", k)
        else:
            if np.min(np.linalg.eigvalsh(Huu)) <= 0.0:
                raise GlqError(f"H_uu is not positive definite at step {k}")
            K_u = -_solve(Huu, Hux, "H_uu", k)
            L_u = -_solve(Huu, Huz, "H_uu", k)
            e_u = -_solve(Huu, B.T @ q, "H_uu", k)
            K_v = np.zeros((0, n))
            L_v = np.zeros((0, p))
            e_v = np.zeros(0)

        s_u = L_u @ z + e_u if p else e_u.copy()
        s_v = L_v @ z + e_v if p else e_v.copy()

        stack = np.vstack([np.eye(n), K_u, K_v])
        ixu = slice(0, n + m + c)
        P_new = stack.T @ H[ixu, ixu] @ stack
        P_new = 0.5 * (P_new + P_new.T)

        Nuu = H[iu, iu] - G[iu, iu]  # B^T P B + multiplicative term
        Nvv = H[iv, iv] - G[iv, iv] if c else np.zeros((0, 0))
        top = np.hstack([G[ix, iu], G[ix, iv], G[ix, iz]])
        mid = np.hstack([G[iu, iu], G[iu, iv], G[iu, iz]])
        bot = np.hstack([G[iv, iu], G[iv, iv], G[iv, iz]])
        Guvz = np.vstack([top, mid, bot])
        svz = np.concatenate([s_u, s_v, z])
        lin = np.vstack([
            B.T @ P @ A + Nuu @ K_u,
            (C.T @ P @ A + Nvv @ K_v) if c else np.zeros((0, n)),
            A + B @ K_u + (C @ K_v if c else 0.0),
        ])
        q_new = stack.T @ (Guvz @ svz) + lin.T @ np.concatenate([s_u, s_v, q])

        Gq = np.vstack([
            np.hstack([G[iu, iu], G[iu, iv], G[iu, iz]]),
            np.hstack([G[iv, iu], G[iv, iv], G[iv, iz]]),
            np.hstack([G[iz, iu], G[iz, iv], G[iz, iz]]),
        ])
        uvz = np.concatenate([s_u, s_v, z])
        drift = B @ s_u + (C @ s_v if c else 0.0)
        r_new = float(uvz @ Gq @ uvz + drift @ P @ drift + 2.0 * q @ drift + r
                      + np.trace(st.E.T @ P @ st.E @ st.W))

        pol.K_u[k], pol.L_u[k], pol.e_u[k] = K_u, L_u, e_u
        P, q, r = P_new, q_new, r_new
        pol.P[k], pol.q[k], pol.r[k] = P, q, r

    return pol


@dataclass(frozen=True)
class RobustnessSpec:
    """Bound on heading deviation that the multiplicative noise must cover."""

    dtheta_max: float = np.pi / 6

    def __post_init__(self):
        if not 0.0 < self.dtheta_max <= np.pi / 2:
            raise ValueError("dtheta_max must lie in (0, pi/2]")


@dataclass(frozen=True)
class TrackingPenalties:
    """Absolute (Q, R) and deviation (Q_delta, R_delta) quadratic weights."""

    Q: np.ndarray
    R: np.ndarray
    Q_delta: np.ndarray
    R_delta: np.ndarray
    QT_scale: float = 10.0
    S_delta: np.ndarray | None = None  # adversary penalty; None disables the channel


def heading_patterns(theta, v_ref, model: ModelParams, spec: RobustnessSpec):
    """Multiplicative directions and variances covering heading error.

    The A directions absorb the heading dependence of the state Jacobian and
    the B directions that of the input Jacobian (which carries dt in its
    position rows).  Scale bounds are converted to variances by squaring.
    """
    c, s = np.cos(theta), np.sin(theta)
    A1 = np.array([[0.0, 0.0, -s], [0.0, 0.0, c], [0.0, 0.0, 0.0]])
    A2 = np.array([[0.0, 0.0, -c], [0.0, 0.0, -s], [0.0, 0.0, 0.0]])
    B1 = model.dt * np.array([[-s, 0.0], [c, 0.0], [0.0, 0.0]])
    B2 = model.dt * np.array([[c, 0.0], [s, 0.0], [0.0, 0.0]])
    d = spec.dtheta_max
    sA1 = v_ref * model.dt * np.sin(d)
    sA2 = v_ref * model.dt * (1.0 - np.cos(d))
    sB1 = np.sin(d)
    sB2 = 1.0 - np.cos(d)
    a_patterns = [(A1, sA1 ** 2), (A2, sA2 ** 2)]
    b_patterns = [(B1, sB1 ** 2), (B2, sB2 ** 2)]
    return a_patterns, b_patterns


def build_tracking_stages(ref_states, ref_inputs, penalties: TrackingPenalties,
                          model: ModelParams, spec: RobustnessSpec | None = None,
                          w_cov=None, defect_tol=1e-6):
    """Tracking-about-a-reference instantiation of the game.

    The decision variables are deviations (dx, du) from the reference, and the
    concatenated reference (x_ref, u_ref) enters as the exogenous signal.
    Returns (stages, terminal) ready for solve_glq.
    """
    ref_states = np.asarray(ref_states, dtype=float)
    ref_inputs = np.asarray(ref_inputs, dtype=float)
    T = ref_inputs.shape[0]
    if ref_states.shape[0] != T + 1:
        raise ValueError("reference needs T+1 states for T inputs")
    pred = dynamics.step_many(ref_states[:-1], ref_inputs, model)
    worst = float(np.max(np.linalg.norm(pred - ref_states[1:], axis=1))) if T else 0.0
    if worst > defect_tol:
        raise ValueError(f"reference is not dynamically consistent (defect {worst:.2e})")

    Q, R = np.asarray(penalties.Q, float), np.asarray(penalties.R, float)
    Qd, Rd = np.asarray(penalties.Q_delta, float), np.asarray(penalties.R_delta, float)
    n, m = 3, 2
    p = n + m
    c = 0 if penalties.S_delta is None else np.asarray(penalties.S_delta).shape[0]
    dim = n + m + c + p
    W = np.asarray(w_cov, float) if w_cov is not None else np.zeros((n, n))

    stages = []
    for k in range(T):
        A, B, E = dynamics.jacobians(ref_states[k], ref_inputs[k], model)
        G = np.zeros((dim, dim))
        ix, iu = slice(0, n), slice(n, n + m)
        iv = slice(n + m, n + m + c)
        izx, izu = slice(n + m + c, n + m + c + n), slice(n + m + c + n, dim)
        G[ix, ix] = Qd + Q
        G[iu, iu] = Rd + R
        G[ix, izx] = Q
        G[izx, ix] = Q
        G[iu, izu] = R
        G[izu, iu] = R
        G[izx, izx] = Q
        G[izu, izu] = R
        C = None
        if c:
            G[iv, iv] = -np.asarray(penalties.S_delta, float)
            C = E.copy()  # adversary pushes through the disturbance channel
        z = np.concatenate([ref_states[k], ref_inputs[k]])
        a_pat, b_pat = [], []
        if spec is not None:
            a_pat, b_pat = heading_patterns(ref_states[k, 2], abs(ref_inputs[k, 0]),
                                            model, spec)
        stages.append(GlqStage(A, B, G, z=z, C=C, E=E, W=W.copy(),
                               a_patterns=a_pat, b_patterns=b_pat))

    G_xx_T = penalties.QT_scale * Qd + Q
    G_xz_T = np.hstack([Q, np.zeros((n, m))])
    G_zz_T = np.zeros((p, p))
    G_zz_T[:n, :n] = Q
    G_zz_T[n:, n:] = R
    z_T = np.concatenate([ref_states[T], np.zeros(m)])
    terminal = GlqTerminal(G_xx_T, G_xz_T, G_zz_T, z_T)
    return stages, terminal


def apply_policy(policy: GlqPolicy, k, x, ref_state, ref_input, model: ModelParams):
    """Runtime tracking law: feedback on the deviation plus feedforward.

    u = K_u dx + L_u [x_ref; u_ref] + e_u + u_ref, clipped to input bounds.
    """
    dx = np.asarray(x, float) - np.asarray(ref_state, float)
    z = np.concatenate([ref_state, ref_input])
    du = policy.K_u[k] @ dx + policy.L_u[k] @ z + policy.e_u[k]
    return np.clip(du + ref_input, model.input_lo, model.input_hi)
