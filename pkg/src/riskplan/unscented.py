"""Sigma-point moment propagation through the nonlinear step.

Weights follow the standard scaled form: the non-central weights are
1 / (2 (n + lambda)) so that the mean weights sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics
from .geometry import psd_factor

N = dynamics.N_STATE


@dataclass(frozen=True)
class UtParams:
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if N + self.lam <= 0:
            raise ValueError("n + lambda must be positive")

    @property
    def lam(self):
        return self.alpha ** 2 * (N + self.kappa) - N


@dataclass
class Belief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)


def sigma_points(b: Belief, p: UtParams):
    """Return (points (2n+1, n), mean weights, covariance weights)."""
    lam = p.lam
    S = psd_factor((N + lam) * b.cov)
    pts = np.empty((2 * N + 1, N))
    pts[0] = b.mean
    for i in range(N):
        pts[1 + i] = b.mean + S[:, i]
        pts[1 + N + i] = b.mean - S[:, i]
    wm = np.full(2 * N + 1, 1.0 / (2.0 * (N + lam)))
    wc = wm.copy()
    wm[0] = lam / (N + lam)
    wc[0] = lam / (N + lam) + 1.0 - p.alpha ** 2 + p.beta
    return pts, wm, wc


def propagate_through(f, b: Belief, p: UtParams, add_cov=None):
    """Push a belief through an arbitrary state map f; add_cov is appended."""
    pts, wm, wc = sigma_points(b, p)
    out = np.array([f(pt) for pt in pts])
    mean = wm @ out
    dev = out - mean
    cov = (wc[:, None] * dev).T @ dev
    if add_cov is not None:
        cov = cov + add_cov
    cov = 0.5 * (cov + cov.T)
    return Belief(mean, cov)


def propagate(b: Belief, u, p: UtParams, model: dynamics.ModelParams, w_cov):
    """One-step propagation through the unicycle dynamics.

    The disturbance enters the dynamics as w * dt, so the additive covariance
    term is dt^2 * w_cov.
    """
    pts, wm, wc = sigma_points(b, p)
    out = dynamics.step_many(pts, np.broadcast_to(np.asarray(u, float), (pts.shape[0], 2)), model)
    mean = wm @ out
    dev = out - mean
    cov = (wc[:, None] * dev).T @ dev + model.dt ** 2 * np.asarray(w_cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    return Belief(mean, cov)
