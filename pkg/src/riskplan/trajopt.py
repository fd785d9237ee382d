"""Multiple-shooting trajectory optimization for steering and NMPC tracking.

Both problems are solved by the same machinery: an augmented-Lagrangian outer
loop over the shooting defects (and, for tracking, halfspace state
constraints), with damped Gauss-Newton steps inside and input bounds handled
by projection during the line search.

Steering drives an initial state to an exact target state while minimizing
sum u^T R u; the endpoint is eliminated from the decision vector, so the
endpoint error is bounded by the defect tolerance.  Tracking minimizes a
quadratic deviation-plus-effort cost over a short horizon with a fixed
initial state and is meant to be re-solved every step with a warm start.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .dynamics import ModelParams
from .geometry import Polytope


@dataclass(frozen=True)
class NlpConfig:
    tol_endpoint: float = 1e-6
    tol_defect: float = 1e-6
    max_outer: int = 100
    max_inner: int = 50
    pg_tol: float = 1e-6
    mu0: float = 10.0
    mu_max: float = 1e10


@dataclass
class SteeringProblem:
    s_init: np.ndarray
    s_des: np.ndarray
    horizon: int
    R: np.ndarray
    model: ModelParams

    def __post_init__(self):
        self.s_init = np.asarray(self.s_init, dtype=float)
        self.s_des = np.asarray(self.s_des, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.horizon < 1:
            raise ValueError("steering horizon must be >= 1")
        if not np.allclose(self.R, self.R.T) or np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise ValueError("R must be symmetric positive definite")


@dataclass
class SteeredTrajectory:
    states: np.ndarray  # (N+1, 3)
    inputs: np.ndarray  # (N, 2)
    cost: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self):
        return True


@dataclass
class SteeringFailure:
    reason: str  # infeasible | max_iter | numerical
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self):
        return False


@dataclass
class TrackingProblem:
    ref_states: np.ndarray  # (H+1, 3)
    ref_inputs: np.ndarray  # (H, 2)
    x_now: np.ndarray
    Q: np.ndarray
    Q_T: np.ndarray
    R: np.ndarray
    model: ModelParams
    env_bounds: Polytope | None = None

    def __post_init__(self):
        self.ref_states = np.atleast_2d(np.asarray(self.ref_states, dtype=float))
        self.ref_inputs = np.atleast_2d(np.asarray(self.ref_inputs, dtype=float))
        self.x_now = np.asarray(self.x_now, dtype=float)
        if self.ref_states.shape[0] != self.ref_inputs.shape[0] + 1:
            raise ValueError("window needs H+1 states and H inputs")
        if self.ref_inputs.shape[0] < 1:
            raise ValueError("tracking horizon must be >= 1")


@dataclass
class TrackingSolution:
    u0: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    converged: bool
    warm: dict | None = None
    diagnostics: dict = field(default_factory=dict)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = (a + np.pi) % (2.0 * np.pi) - np.pi
    if np.isscalar(w):
        return np.pi if w == -np.pi else w
    w = np.asarray(w)
    w[w == -np.pi] = np.pi
    return w


def trajectory_defects(states, inputs, model: ModelParams):
    """Per-step rollout errors ||s[k+1] - f(s[k], u[k])||, shape (N,)."""
    states = np.asarray(states, dtype=float)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    pred = dynamics.step_many(states[:-1], inputs, model)
    return np.linalg.norm(states[1:] - pred, axis=1)


def steering_cost(inputs, R):
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    return float(np.einsum("ki,ij,kj->", inputs, np.asarray(R, float), inputs))


# ---------------------------------------------------------------------------
# Shared Gauss-Newton / augmented-Lagrangian core
# ---------------------------------------------------------------------------

class _ShootingNlp:
    """One multiple-shooting instance over a fixed horizon.

    Subclasses fill in the objective residual rows; this class owns the
    decision-vector layout, defect constraints, optional halfspace state
    constraints, and the AL/GN iteration.
    """

    def __init__(self, model, N, x0, x_end=None, env_A=None, env_b=None):
        self.model = model
        self.N = N
        self.x0 = np.asarray(x0, dtype=float)
        self.x_end = None if x_end is None else np.asarray(x_end, dtype=float)
        self.n_dec_states = N - 1 if self.x_end is not None else N
        self.nz = 3 * self.n_dec_states + 2 * N
        self.env_A = env_A
        self.env_b = env_b
        self.n_ineq = (0 if env_A is None else env_A.shape[0]) * self.n_dec_states
        lo = np.full(self.nz, -np.inf)
        hi = np.full(self.nz, np.inf)
        lo[3 * self.n_dec_states:] = np.tile(model.input_lo, N)
        hi[3 * self.n_dec_states:] = np.tile(model.input_hi, N)
        self.lo, self.hi = lo, hi

    # -- layout helpers ----------------------------------------------------
    def unpack(self, z):
        ns = self.n_dec_states
        states = np.empty((self.N + 1, 3))
        states[0] = self.x0
        if ns:
            states[1:1 + ns] = z[:3 * ns].reshape(ns, 3)
        if self.x_end is not None:
            states[self.N] = self.x_end
        inputs = z[3 * ns:].reshape(self.N, 2)
        return states, inputs

    def pack(self, states, inputs):
        ns = self.n_dec_states
        z = np.empty(self.nz)
        if ns:
            z[:3 * ns] = np.asarray(states, float)[1:1 + ns].reshape(-1)
        z[3 * ns:] = np.asarray(inputs, float).reshape(-1)
        return np.clip(z, self.lo, self.hi)

    # -- residuals ---------------------------------------------------------
    def objective_rows(self):
        raise NotImplementedError

    def objective_residual(self, states, inputs):
        raise NotImplementedError

    def objective_jacobian(self, J, r0):
        """Write the (constant) objective rows into the Jacobian buffer."""
        raise NotImplementedError

    def constraints(self, states, inputs):
        """Equality defects (3N,) and inequality values g <= 0 (n_ineq,)."""
        pred = dynamics.step_many(states[:-1], inputs, self.model)
        c = (states[1:] - pred).reshape(-1)
        if self.n_ineq:
            xs = states[1:1 + self.n_dec_states]
            g = (xs @ self.env_A.T - self.env_b).reshape(-1)
        else:
            g = np.zeros(0)
        return c, g

    def al_value(self, z, lam, nu, mu):
        states, inputs = self.unpack(z)
        robj = self.objective_residual(states, inputs)
        c, g = self.constraints(states, inputs)
        val = robj @ robj + 0.5 * mu * np.sum((c + lam / mu) ** 2)
        if self.n_ineq:
            h = np.maximum(0.0, g + nu / mu)
            val += 0.5 * mu * np.sum(h * h)
        return val

    def _build_jacobian_cache(self):
        ns, N = self.n_dec_states, self.N
        n_obj = self.objective_rows()
        n_rows = n_obj + 3 * N + self.n_ineq
        J = np.zeros((n_rows, self.nz))
        self.objective_jacobian(J, 0)  # constant rows, written once
        shape = J.shape
        dt = self.model.dt
        iu0 = 3 * ns

        const_rc, const_val = [], []  # entries equal to const * sqrt(mu/2)
        varA_rc, varA_ks = [], []  # d(defect)/d(theta_k) entries, iterate-dependent
        varB_rc = []  # d(defect)/d(v_k) entries
        for k in range(N):
            r = n_obj + 3 * k
            if 1 <= k + 1 <= ns:
                for i in range(3):
                    const_rc.append((r + i, 3 * k + i))
                    const_val.append(1.0)
            if 1 <= k <= ns:
                for i in range(3):
                    const_rc.append((r + i, 3 * (k - 1) + i))
                    const_val.append(-1.0)
                varA_rc.append(((r + 0, 3 * (k - 1) + 2), (r + 1, 3 * (k - 1) + 2)))
                varA_ks.append(k)
            const_rc.append((r + 2, iu0 + 2 * k + 1))
            const_val.append(-dt)
            varB_rc.append(((r + 0, iu0 + 2 * k), (r + 1, iu0 + 2 * k)))

        def flat(rc):
            rc = np.asarray(rc, dtype=int).reshape(-1, 2)
            return np.ravel_multi_index((rc[:, 0], rc[:, 1]), shape)

        cache = {
            "J": J,
            "n_obj": n_obj,
            "const_idx": flat(const_rc),
            "const_val": np.asarray(const_val),
            "varA_idx": flat(varA_rc) if varA_rc else np.zeros(0, dtype=int),
            "varA_k": np.asarray(varA_ks, dtype=int),
            "varB_idx": flat(varB_rc),
            "smu": None,
        }
        if self.n_ineq:
            Fb = self.env_A.shape[0]
            rows = n_obj + 3 * N + np.arange(self.n_ineq)
            cols = np.repeat(3 * np.arange(ns), Fb * 3).reshape(self.n_ineq, 3)
            cols = cols + np.arange(3)
            idx = np.ravel_multi_index(
                (np.repeat(rows, 3), cols.reshape(-1)), shape)
            cache["ineq_idx"] = idx
            cache["ineq_a"] = np.tile(self.env_A, (ns, 1))
        self._jac_cache = cache

    def al_residual_jacobian(self, z, lam, nu, mu):
        """Residual vector rho and dense Jacobian of the AL least squares."""
        if getattr(self, "_jac_cache", None) is None:
            self._build_jacobian_cache()
        cache = self._jac_cache
        J = cache["J"]
        n_obj = cache["n_obj"]
        ns, N = self.n_dec_states, self.N
        smu = np.sqrt(0.5 * mu)
        if cache["smu"] != smu:
            J.flat[cache["const_idx"]] = smu * cache["const_val"]
            cache["smu"] = smu

        states, inputs = self.unpack(z)
        robj = self.objective_residual(states, inputs)
        c, g = self.constraints(states, inputs)
        rho = np.empty(J.shape[0])
        rho[:n_obj] = robj
        rho[n_obj:n_obj + 3 * N] = smu * (c + lam / mu)

        dt = self.model.dt
        th = states[:-1, 2]
        v = inputs[:, 0]
        cth, sth = np.cos(th), np.sin(th)
        if cache["varA_idx"].size:
            kk = cache["varA_k"]  # defect index k with s_k a decision variable
            vals = np.empty((kk.size, 2))
            vals[:, 0] = smu * v[kk] * sth[kk] * dt   # -smu * dA[0,2]
            vals[:, 1] = -smu * v[kk] * cth[kk] * dt  # -smu * dA[1,2]
            J.flat[cache["varA_idx"]] = vals.reshape(-1)
        valsB = np.empty((N, 2))
        valsB[:, 0] = -smu * cth * dt
        valsB[:, 1] = -smu * sth * dt
        J.flat[cache["varB_idx"]] = valsB.reshape(-1)

        if self.n_ineq:
            h = g + nu / mu
            act = h > 0.0
            rho[n_obj + 3 * N:] = smu * np.maximum(0.0, h)
            vals = (smu * cache["ineq_a"]) * act[:, None]
            J.flat[cache["ineq_idx"]] = vals.reshape(-1)
        return rho, J

    def projected_gradient_norm(self, z, grad):
        pg = np.abs(grad).copy()
        at_lo = z <= self.lo + 1e-12
        at_hi = z >= self.hi - 1e-12
        pg[at_lo] = np.maximum(0.0, -grad[at_lo])
        pg[at_hi] = np.maximum(0.0, grad[at_hi])
        return float(np.max(pg)) if pg.size else 0.0

    def violation(self, states, inputs):
        """Largest per-step defect norm / halfspace excess (matches tolerances)."""
        c, g = self.constraints(states, inputs)
        vc = float(np.max(np.linalg.norm(c.reshape(self.N, 3), axis=1)))
        return max(vc, float(np.max(g, initial=0.0)))

    # -- solver ------------------------------------------------------------
    def minimize(self, z0, cfg: NlpConfig, total_inner_cap=None):
        z = np.clip(np.asarray(z0, dtype=float), self.lo, self.hi)
        lam = np.zeros(3 * self.N)
        nu = np.zeros(self.n_ineq)
        mu = cfg.mu0
        eta = 1e-2
        tol_c = cfg.tol_defect
        inner_used = 0
        best_viol = np.inf
        stall = 0
        status = "max_iter"
        pg = np.inf

        omega = 1e-2  # inner stationarity target, tightened as multipliers settle
        for outer in range(cfg.max_outer):
            z, pg, used, bad = self._inner(z, lam, nu, mu, cfg, max(omega, cfg.pg_tol),
                                           None if total_inner_cap is None
                                           else total_inner_cap - inner_used)
            inner_used += used
            if bad:
                status = "numerical"
                break
            states, inputs = self.unpack(z)
            c, g = self.constraints(states, inputs)
            viol = self.violation(states, inputs)
            if viol <= tol_c and pg <= cfg.pg_tol:
                status = "ok"
                break
            if viol <= max(eta, tol_c):
                lam = lam + mu * c
                if self.n_ineq:
                    nu = np.maximum(0.0, nu + mu * g)
                eta = max(0.1 * tol_c, 0.2 * eta)
                omega = max(cfg.pg_tol, 0.1 * omega)
            else:
                mu = min(10.0 * mu, cfg.mu_max)
                omega = max(cfg.pg_tol, 0.5 * omega)
            if viol < 0.5 * best_viol:
                best_viol, stall = viol, 0
            else:
                stall += 1
            if (mu >= cfg.mu_max and stall >= 3) or \
               (total_inner_cap is not None and inner_used >= total_inner_cap):
                break

        states, inputs = self.unpack(z)
        viol = self.violation(states, inputs)
        if status not in ("ok", "numerical"):
            status = "infeasible" if (pg <= 1e-4 and viol > 1e-3) else "max_iter"
        return z, {"status": status, "violation": float(viol), "pg": float(pg),
                   "mu": mu, "inner_iterations": inner_used, "lam": lam, "nu": nu}

    def _inner(self, z, lam, nu, mu, cfg, omega, budget):
        """Projected Gauss-Newton: bound-active coordinates are frozen when the
        gradient points outward, so the step is a true GN step on the rest."""
        damp = 1e-8
        F = self.al_value(z, lam, nu, mu)
        if not np.isfinite(F):
            return z, np.inf, 0, True
        pg = np.inf
        iters = cfg.max_inner if budget is None else max(1, min(cfg.max_inner, budget))
        used = 0
        for _ in range(iters):
            rho, J = self.al_residual_jacobian(z, lam, nu, mu)
            grad = 2.0 * (J.T @ rho)
            pg = self.projected_gradient_norm(z, grad)
            if pg <= omega:
                break
            used += 1
            frozen = ((z <= self.lo + 1e-12) & (grad >= 0.0)) | \
                     ((z >= self.hi - 1e-12) & (grad <= 0.0))
            free = ~frozen
            Jf = J[:, free]
            JtJ = Jf.T @ Jf
            rhs = -(Jf.T @ rho)
            dvec = np.diag(JtJ).copy()
            dvec[dvec < 1e-12] = 1.0
            improved = False
            for _ in range(16):
                try:
                    df = np.linalg.solve(JtJ + damp * np.diag(dvec), rhs)
                except np.linalg.LinAlgError:
                    damp *= 10.0
                    continue
                if not np.all(np.isfinite(df)):
                    return z, pg, used, True
                delta = np.zeros(self.nz)
                delta[free] = df
                slope = float(grad @ delta)
                alpha = 1.0
                while alpha >= 1e-8:
                    z_try = np.clip(z + alpha * delta, self.lo, self.hi)
                    F_try = self.al_value(z_try, lam, nu, mu)
                    if F_try <= F + 1e-4 * alpha * slope or \
                       (slope > -1e-16 and F_try < F):
                        z, F = z_try, F_try
                        improved = True
                        break
                    alpha *= 0.5
                if improved:
                    damp = max(damp / 3.0, 1e-12)
                    break
                damp *= 10.0
                if damp > 1e12:
                    break
            if not improved:
                rho, J = self.al_residual_jacobian(z, lam, nu, mu)
                grad = 2.0 * (J.T @ rho)
                pg = self.projected_gradient_norm(z, grad)
                break
        return z, pg, used, False


class _SteeringNlp(_ShootingNlp):
    def __init__(self, problem: SteeringProblem):
        super().__init__(problem.model, problem.horizon, problem.s_init,
                         x_end=problem.s_des)
        self.Rh = np.linalg.cholesky(problem.R)

    def objective_rows(self):
        return 2 * self.N

    def objective_residual(self, states, inputs):
        return (inputs @ self.Rh).reshape(-1)

    def objective_jacobian(self, J, r0):
        iu0 = 3 * self.n_dec_states
        RhT = self.Rh.T
        for k in range(self.N):
            J[r0 + 2 * k:r0 + 2 * k + 2, iu0 + 2 * k:iu0 + 2 * k + 2] = RhT


class _TrackingNlp(_ShootingNlp):
    def __init__(self, problem: TrackingProblem):
        env_A = env_b = None
        if problem.env_bounds is not None:
            env_A = problem.env_bounds.A
            env_b = problem.env_bounds.b
        super().__init__(problem.model, problem.ref_inputs.shape[0], problem.x_now,
                         env_A=env_A, env_b=env_b)
        self.ref_states = problem.ref_states
        self.Qh = _psd_sqrt(problem.Q)
        self.QTh = _psd_sqrt(problem.Q_T)
        self.Rh = np.linalg.cholesky(problem.R)

    def objective_rows(self):
        return 3 * self.N + 2 * self.N

    def objective_residual(self, states, inputs):
        dev = states[1:] - self.ref_states[1:]
        rx = np.concatenate([(dev[:-1] @ self.Qh).reshape(-1), dev[-1] @ self.QTh])
        ru = (inputs @ self.Rh).reshape(-1)
        return np.concatenate([rx, ru])

    def objective_jacobian(self, J, r0):
        N = self.N
        for k in range(N - 1):
            J[r0 + 3 * k:r0 + 3 * k + 3, 3 * k:3 * k + 3] = self.Qh.T
        J[r0 + 3 * (N - 1):r0 + 3 * N, 3 * (N - 1):3 * N] = self.QTh.T
        iu0 = 3 * self.n_dec_states
        ru0 = r0 + 3 * N
        RhT = self.Rh.T
        for k in range(N):
            J[ru0 + 2 * k:ru0 + 2 * k + 2, iu0 + 2 * k:iu0 + 2 * k + 2] = RhT


def _psd_sqrt(M):
    """Factor S with S S^T = M for symmetric PSD M (used as row weights)."""
    M = np.asarray(M, dtype=float)
    w, v = np.linalg.eigh(0.5 * (M + M.T))
    if np.min(w) < -1e-10:
        raise ValueError("penalty matrix must be positive semidefinite")
    return v * np.sqrt(np.clip(w, 0.0, None))


# ---------------------------------------------------------------------------
# Steering
# ---------------------------------------------------------------------------

def _steering_init(p: SteeringProblem):
    """Straight-line warm start: turn toward the displacement, drive, turn."""
    N = p.horizon
    d = p.s_des[:2] - p.s_init[:2]
    th0 = p.s_init[2]
    if np.linalg.norm(d) > 1e-12:
        phi = th0 + wrap_angle(np.arctan2(d[1], d[0]) - th0)
    else:
        phi = th0
    th_des = phi + wrap_angle(p.s_des[2] - phi)

    states = np.empty((N + 1, 3))
    frac = np.linspace(0.0, 1.0, N + 1)
    states[:, 0] = p.s_init[0] + frac * d[0]
    states[:, 1] = p.s_init[1] + frac * d[1]
    k1 = max(1, N // 4)
    k2 = max(k1 + 1, N - N // 4)
    th = np.empty(N + 1)
    th[:k1 + 1] = np.linspace(th0, phi, k1 + 1)
    th[k1:k2 + 1] = phi
    th[k2:] = np.linspace(phi, th_des, N + 1 - k2)
    states[:, 2] = th

    inputs = np.empty((N, 2))
    dp = np.diff(states[:, :2], axis=0)
    head = np.stack([np.cos(states[:-1, 2]), np.sin(states[:-1, 2])], axis=1)
    inputs[:, 0] = np.einsum("ki,ki->k", dp, head) / p.model.dt
    inputs[:, 1] = np.diff(states[:, 2]) / p.model.dt
    inputs = np.clip(inputs, p.model.input_lo, p.model.input_hi)
    return states, inputs


def solve_steering(p: SteeringProblem, cfg: NlpConfig = NlpConfig()):
    """Drive s_init to s_des in exactly `horizon` steps, minimizing effort."""
    nlp = _SteeringNlp(p)
    states0, inputs0 = _steering_init(p)
    z0 = nlp.pack(states0, inputs0)
    z, info = nlp.minimize(z0, cfg)
    states, inputs = nlp.unpack(z)
    diag = {k: info[k] for k in ("status", "violation", "pg", "inner_iterations")}
    if info["status"] != "ok":
        return SteeringFailure(info["status"], diag)
    defects = trajectory_defects(states, inputs, p.model)
    endpoint = float(np.linalg.norm(states[-1] - p.s_des))
    if np.max(defects) > cfg.tol_defect or endpoint > cfg.tol_endpoint:
        diag["violation"] = float(max(np.max(defects), endpoint))
        return SteeringFailure("max_iter", diag)
    diag["max_defect"] = float(np.max(defects))
    return SteeredTrajectory(states, inputs, steering_cost(inputs, p.R), diag)


# ---------------------------------------------------------------------------
# NMPC tracking
# ---------------------------------------------------------------------------

def solve_tracking(p: TrackingProblem, cfg: NlpConfig = NlpConfig(),
                   max_total_iter=30, warm=None):
    """One receding-horizon solve; returns the first input and the prediction.

    `warm` is the dict from a previous TrackingSolution shifted by one step.
    Convergence failures still return the best iterate, flagged accordingly.
    """
    nlp = _TrackingNlp(p)
    if warm is not None and warm.get("states") is not None \
            and warm["states"].shape[0] == p.ref_states.shape[0]:
        states0 = warm["states"].copy()
        inputs0 = warm["inputs"].copy()
        states0[0] = p.x_now
    else:
        states0 = p.ref_states.copy()
        states0[0] = p.x_now
        inputs0 = p.ref_inputs.copy()
    z0 = nlp.pack(states0, inputs0)
    tr_cfg = NlpConfig(tol_endpoint=cfg.tol_endpoint, tol_defect=cfg.tol_defect,
                       max_outer=cfg.max_outer, max_inner=max_total_iter,
                       pg_tol=max(cfg.pg_tol, 1e-5), mu0=1e4, mu_max=cfg.mu_max)
    z, info = nlp.minimize(z0, tr_cfg, total_inner_cap=max_total_iter)
    states, inputs = nlp.unpack(z)
    # real-time budget: a near-feasible iterate is still a usable control
    ok = info["status"] == "ok" or \
        (info["violation"] <= max(10.0 * cfg.tol_defect, 1e-5) and info["pg"] <= 1e-2)
    warm_next = {
        "states": np.vstack([states[1:], dynamics.step(states[-1], inputs[-1],
                                                       np.zeros(3), p.model)[None]]),
        "inputs": np.vstack([inputs[1:], inputs[-1][None]]),
    }
    return TrackingSolution(inputs[0].copy(), states, inputs, ok, warm_next,
                            {k: info[k] for k in ("status", "violation", "pg",
                                                  "inner_iterations")})


class NmpcTracker:
    """Receding-horizon controller over a full reference plan.

    Pads the window past the end of the plan by repeating the terminal state
    with zero input; on solver failure the previous prediction is shifted one
    step and reused (last input repeated).
    """

    def __init__(self, ref_states, ref_inputs, horizon, Q, Q_T, R,
                 model: ModelParams, env_bounds: Polytope | None = None,
                 cfg: NlpConfig = NlpConfig(), max_iter=30):
        self.ref_states = np.asarray(ref_states, dtype=float)
        self.ref_inputs = np.asarray(ref_inputs, dtype=float)
        self.H = int(horizon)
        self.Q, self.Q_T, self.R = Q, Q_T, R
        self.model = model
        self.env_bounds = env_bounds
        self.cfg = cfg
        self.max_iter = max_iter
        self.warm = None
        self.prev_inputs = None
        self.failures = 0

    def window(self, t):
        T = self.ref_inputs.shape[0]
        idx = np.minimum(np.arange(t, t + self.H + 1), T)
        states = self.ref_states[idx]
        inputs = np.zeros((self.H, 2))
        valid = np.arange(t, t + self.H) < T
        inputs[valid] = self.ref_inputs[np.arange(t, t + self.H)[valid]]
        return states, inputs

    def control(self, t, x):
        ref_states, ref_inputs = self.window(t)
        prob = TrackingProblem(ref_states, ref_inputs, x, self.Q, self.Q_T,
                               self.R, self.model, self.env_bounds)
        sol = solve_tracking(prob, self.cfg, self.max_iter, self.warm)
        if sol.converged:
            self.warm = sol.warm
            self.prev_inputs = sol.inputs
            return sol.u0
        self.failures += 1
        if self.prev_inputs is not None:
            shifted = np.vstack([self.prev_inputs[1:], self.prev_inputs[-1][None]])
            self.prev_inputs = shifted
            self.warm = sol.warm  # keep warm-starting from the best iterate
            return shifted[0].copy()
        self.prev_inputs = sol.inputs
        self.warm = sol.warm
        return sol.u0
