"""Discrete-time unicycle model, exact Jacobians, and process-noise sampling.

State is (px, py, theta) with theta unwrapped on the real line; input is
(v, omega).  One step of the forward-Euler model:

    px'    = px + cos(theta) * v * dt + wx * dt
    py'    = py + sin(theta) * v * dt + wy * dt
    theta' = theta + omega * dt + wtheta * dt
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_STATE = 3
N_INPUT = 2


@dataclass(frozen=True)
class ModelParams:
    dt: float = 0.2
    v_max: float = 0.5
    omega_max: float = np.pi

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError("input bounds must be positive")

    @property
    def input_lo(self):
        return np.array([-self.v_max, -self.omega_max])

    @property
    def input_hi(self):
        return np.array([self.v_max, self.omega_max])


@dataclass
class NoiseModel:
    """Additive disturbance w entering the dynamics as w * dt."""

    kind: str = "laplace"  # laplace | gaussian | none
    cov: np.ndarray = field(default_factory=lambda: 5e-7 * np.eye(N_STATE))
    seed: int = 0

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (N_STATE, N_STATE):
            raise ValueError("noise covariance must be 3x3")
        if self.kind not in ("laplace", "gaussian", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "laplace" and np.any(self.cov != np.diag(np.diag(self.cov))):
            raise ValueError("laplace noise requires a diagonal covariance")


def step(x, u, w, p: ModelParams):
    """One forward-Euler step.  Pure; theta is never wrapped here."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    c, s = np.cos(x[2]), np.sin(x[2])
    return np.array([
        x[0] + c * u[0] * p.dt + w[0] * p.dt,
        x[1] + s * u[0] * p.dt + w[1] * p.dt,
        x[2] + u[1] * p.dt + w[2] * p.dt,
    ])


def step_many(xs, us, p: ModelParams):
    """Vectorized noise-free step over rows of xs (K,3) and us (K,2)."""
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    c, s = np.cos(xs[:, 2]), np.sin(xs[:, 2])
    out = np.empty_like(xs)
    out[:, 0] = xs[:, 0] + c * us[:, 0] * p.dt
    out[:, 1] = xs[:, 1] + s * us[:, 0] * p.dt
    out[:, 2] = xs[:, 2] + us[:, 1] * p.dt
    return out


def jacobians(x, u, p: ModelParams):
    """Exact Jacobians (A, B, E) of step() wrt state, input, disturbance."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    c, s = np.cos(x[2]), np.sin(x[2])
    v = u[0]
    A = np.array([
        [1.0, 0.0, -v * s * p.dt],
        [0.0, 1.0, v * c * p.dt],
        [0.0, 0.0, 1.0],
    ])
    B = np.array([
        [c * p.dt, 0.0],
        [s * p.dt, 0.0],
        [0.0, p.dt],
    ])
    E = p.dt * np.eye(N_STATE)
    return A, B, E


def sample_noise(model: NoiseModel, count: int, rng=None):
    """Draw `count` i.i.d. disturbance vectors, deterministic given the seed.

    Laplace components are independent with scale b_i = sqrt(cov_ii / 2) so the
    per-component variance equals cov_ii.
    """
    if rng is None:
        rng = np.random.default_rng(model.seed)
    if model.kind == "none":
        return np.zeros((count, N_STATE))
    if model.kind == "gaussian":
        return rng.multivariate_normal(np.zeros(N_STATE), model.cov, size=count)
    b = np.sqrt(np.diag(model.cov) / 2.0)
    return rng.laplace(0.0, 1.0, size=(count, N_STATE)) * b
