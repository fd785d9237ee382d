"""Polytopic environment model and distributionally robust collision checks.

Every halfspace is a pair (a, b) encoding a^T s <= b over the state
s = (px, py, theta).  Shipped environments only constrain position (a[2] = 0)
but the checks accept any 3-vector normal.

The robust check tightens each face by

    pad = sqrt((1 - alpha') / alpha') * ||S^T a||_2,   S S^T = Sigma,

which is the worst-case bound over all distributions sharing the given mean
and covariance.  A belief is safe when the tightened environment faces all
hold and, for every obstacle, at least one tightened face separates the mean
from the obstacle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

EIG_CLAMP = 1e-10  # eigenvalues in [-EIG_CLAMP, 0] are treated as exact zeros


class InvalidCovariance(ValueError):
    """Covariance is not positive semidefinite after symmetric projection."""


class EnvironmentFormatError(ValueError):
    """Environment file violates the schema; message carries the JSON path."""


def psd_factor(sigma):
    """Return S with S S^T = sym(sigma), clamping rounding-level negatives.

    Raises InvalidCovariance when an eigenvalue is below -EIG_CLAMP.
    """
    sigma = np.asarray(sigma, dtype=float)
    sym = 0.5 * (sigma + sigma.T)
    if not np.any(sym):
        return np.zeros_like(sym)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(sym)
    if np.min(w) < -EIG_CLAMP:
        raise InvalidCovariance(f"covariance eigenvalue {np.min(w):.3e} < -{EIG_CLAMP:.0e}")
    w = np.clip(w, 0.0, None)
    return v * np.sqrt(w)


@dataclass
class Polytope:
    """Intersection of halfspaces a_j^T s <= b_j, rows of A and entries of b."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.A.shape != (self.b.size, 3):
            raise ValueError("polytope needs A of shape (F, 3) matching b")
        if self.A.shape[0] == 0:
            raise ValueError("polytope needs at least one halfspace")
        if np.any(np.linalg.norm(self.A, axis=1) == 0.0):
            raise ValueError("halfspace normal must be nonzero")

    @property
    def n_faces(self):
        return self.A.shape[0]

    def contains(self, s, tol=0.0):
        return bool(np.all(self.A @ np.asarray(s, dtype=float) <= self.b + tol))

    def planar(self):
        return bool(np.all(self.A[:, 2] == 0.0))

    def vertices_xy(self):
        """Vertices of the (x, y) slice, ordered counterclockwise.

        Only meaningful for planar polytopes (a[2] = 0 on every face).
        """
        if not self.planar():
            raise ValueError("vertex enumeration requires position-only faces")
        A2, b = self.A[:, :2], self.b
        pts = []
        F = self.n_faces
        for i in range(F):
            for j in range(i + 1, F):
                M = np.array([A2[i], A2[j]])
                if abs(np.linalg.det(M)) < 1e-12:
                    continue
                p = np.linalg.solve(M, np.array([b[i], b[j]]))
                if np.all(A2 @ p <= b + 1e-9):
                    pts.append(p)
        if not pts:
            return np.zeros((0, 2))
        pts = np.array(pts)
        center = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
        pts = pts[order]
        keep = [0]
        for i in range(1, len(pts)):
            if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-9:
                keep.append(i)
        if len(keep) > 1 and np.linalg.norm(pts[keep[-1]] - pts[keep[0]]) <= 1e-9:
            keep.pop()
        return pts[keep]

    def is_bounded_nonempty_xy(self):
        verts = self.vertices_xy()
        if verts.shape[0] < 3:
            return False
        # bounded iff face normals positively span the plane
        ang = np.sort(np.arctan2(self.A[:, 1], self.A[:, 0]))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        return bool(np.max(gaps) < np.pi)

    def interior_point_xy(self):
        verts = self.vertices_xy()
        if verts.shape[0] == 0:
            raise ValueError("empty polytope")
        return verts.mean(axis=0)


def rect_polytope(xmin, xmax, ymin, ymax):
    """Axis-aligned rectangle as a 4-face polytope over (x, y)."""
    if not (xmin < xmax and ymin < ymax):
        raise ValueError("rectangle needs xmin < xmax and ymin < ymax")
    A = np.array([
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
    ])
    b = np.array([xmax, -xmin, ymax, -ymin])
    return Polytope(A, b)


@dataclass(frozen=True)
class RiskBudget:
    """Plan failure budget beta split over steps then over faces."""

    beta: float
    t_max: int
    n_total: int

    def __post_init__(self):
        if not 0.0 < self.beta <= 0.5:
            raise ValueError("beta must lie in (0, 0.5]")
        if self.t_max < 0 or self.n_total <= 0:
            raise ValueError("t_max and n_total must be positive")
        if not 0.0 < self.alpha_step <= 0.5:
            raise ValueError("per-step risk must lie in (0, 0.5]")

    @property
    def alpha_step(self):
        return self.beta / (self.t_max + 1)

    @property
    def alpha_face(self):
        return self.alpha_step / self.n_total


@dataclass
class Environment:
    bounds: Polytope
    obstacles: list
    goal: np.ndarray  # [xmin, xmax, ymin, ymax]
    start: np.ndarray  # [x, y, theta]
    risk_beta: float = 0.1
    risk_t_max: int = 1000

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float)
        self.start = np.asarray(self.start, dtype=float)

    @property
    def n_total(self):
        return self.bounds.n_faces + sum(o.n_faces for o in self.obstacles)

    def budget(self):
        return RiskBudget(self.risk_beta, self.risk_t_max, self.n_total)

    def in_goal(self, s):
        x, y = s[0], s[1]
        g = self.goal
        return bool(g[0] <= x <= g[1] and g[2] <= y <= g[3])

    def bounds_box_xy(self):
        verts = self.bounds.vertices_xy()
        return np.array([verts[:, 0].min(), verts[:, 0].max(),
                         verts[:, 1].min(), verts[:, 1].max()])


def dr_padding(a, sigma, alpha_prime, factor=None):
    """Constraint tightening sqrt((1 - a') / a') * ||S^T a|| for S S^T = sigma."""
    if not 0.0 < alpha_prime <= 0.5:
        raise ValueError("alpha_prime must lie in (0, 0.5]")
    S = psd_factor(sigma) if factor is None else factor
    return np.sqrt((1.0 - alpha_prime) / alpha_prime) * np.linalg.norm(S.T @ np.asarray(a, dtype=float))


def deterministic_point_check(s, env: Environment):
    """Safe iff s satisfies the bounds and lies outside every obstacle."""
    s = np.asarray(s, dtype=float)
    if not env.bounds.contains(s):
        return False
    for ob in env.obstacles:
        if not np.any(ob.A @ s >= ob.b):
            return False
    return True


def dr_point_check(mean, sigma, env: Environment, budget: RiskBudget):
    """Tightened check of a belief (mean, sigma) against all constraints.

    Environment faces must hold with margin pad; each obstacle needs one face
    separating the mean by at least pad on the far side.
    """
    mean = np.asarray(mean, dtype=float)
    S = psd_factor(sigma)
    coef = np.sqrt((1.0 - budget.alpha_face) / budget.alpha_face)
    pads = coef * np.linalg.norm(env.bounds.A @ S, axis=1)
    if np.any(env.bounds.A @ mean > env.bounds.b - pads):
        return False
    for ob in env.obstacles:
        pads = coef * np.linalg.norm(ob.A @ S, axis=1)
        if not np.any(ob.A @ mean >= ob.b + pads):
            return False
    return True


def point_polygon_distance(p_xy, poly: Polytope):
    """Euclidean distance from a planar point to a polytope; 0 if inside."""
    verts = poly.vertices_xy()
    p = np.asarray(p_xy, dtype=float)[:2]
    if verts.shape[0] == 0:
        return np.inf
    s = np.zeros(3)
    s[:2] = p
    if poly.contains(s):
        return 0.0
    best = np.inf
    n = verts.shape[0]
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        ab = b - a
        t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


def min_obstacle_clearance(states, env: Environment):
    """Smallest distance from any state's position to any obstacle."""
    best = np.inf
    for s in np.atleast_2d(states):
        for ob in env.obstacles:
            best = min(best, point_polygon_distance(s[:2], ob))
    return best


# ---------------------------------------------------------------------------
# Environment file loading
# ---------------------------------------------------------------------------

def _halfspaces_from_spec(spec, path):
    """Parse a list of {a, b} dicts or a {rect: [...]} shorthand."""
    if isinstance(spec, dict) and "rect" in spec:
        r = spec["rect"]
        if not (isinstance(r, (list, tuple)) and len(r) == 4):
            raise EnvironmentFormatError(f"{path}.rect: expected [xmin, xmax, ymin, ymax]")
        try:
            return rect_polytope(*[float(v) for v in r])
        except ValueError as e:
            raise EnvironmentFormatError(f"{path}.rect: {e}") from None
    if not isinstance(spec, list) or not spec:
        raise EnvironmentFormatError(f"{path}: expected a nonempty list of halfspaces")
    A, b = [], []
    for j, h in enumerate(spec):
        if not isinstance(h, dict) or set(h) != {"a", "b"}:
            raise EnvironmentFormatError(f"{path}[{j}]: expected an object with keys a, b")
        a = h["a"]
        if not (isinstance(a, (list, tuple)) and len(a) == 3):
            raise EnvironmentFormatError(f"{path}[{j}].a: expected a 3-vector")
        if all(float(v) == 0.0 for v in a):
            raise EnvironmentFormatError(f"{path}[{j}].a: normal must be nonzero")
        A.append([float(v) for v in a])
        b.append(float(h["b"]))
    return Polytope(np.array(A), np.array(b))


def load_environment(path_or_dict):
    """Load and validate an environment file, reporting the first violation."""
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        with open(path_or_dict) as f:
            raw = json.load(f)
    allowed = {"bounds", "obstacles", "goal", "start", "risk"}
    unknown = set(raw) - allowed
    if unknown:
        raise EnvironmentFormatError(f"unknown key {sorted(unknown)[0]!r}")
    for key in ("bounds", "obstacles", "goal", "start"):
        if key not in raw:
            raise EnvironmentFormatError(f"missing key {key!r}")

    bounds = _halfspaces_from_spec(raw["bounds"], "bounds")
    if not isinstance(raw["obstacles"], list):
        raise EnvironmentFormatError("obstacles: expected a list")
    obstacles = [_halfspaces_from_spec(ob, f"obstacles[{i}]")
                 for i, ob in enumerate(raw["obstacles"])]

    goal_spec = raw["goal"]
    if not (isinstance(goal_spec, dict) and set(goal_spec) == {"rect"}
            and len(goal_spec["rect"]) == 4):
        raise EnvironmentFormatError("goal: expected {rect: [xmin, xmax, ymin, ymax]}")
    goal = np.array([float(v) for v in goal_spec["rect"]])
    if not (goal[0] < goal[1] and goal[2] < goal[3]):
        raise EnvironmentFormatError("goal.rect: expected xmin < xmax and ymin < ymax")

    start_spec = raw["start"]
    if not (isinstance(start_spec, (list, tuple)) and len(start_spec) == 3):
        raise EnvironmentFormatError("start: expected [x, y, theta]")
    start = np.array([float(v) for v in start_spec])
    if not np.all(np.isfinite(start)):
        raise EnvironmentFormatError("start: values must be finite")

    risk = raw.get("risk", {})
    if not isinstance(risk, dict) or set(risk) - {"beta", "t_max"}:
        raise EnvironmentFormatError("risk: expected {beta, t_max}")
    beta = float(risk.get("beta", 0.1))
    t_max = int(risk.get("t_max", 1000))

    env = Environment(bounds, obstacles, goal, start, beta, t_max)

    # cross-field invariants, first violation wins
    if bounds.planar() and not bounds.is_bounded_nonempty_xy():
        raise EnvironmentFormatError("bounds: polytope is empty or unbounded")
    if not bounds.contains(start):
        raise EnvironmentFormatError("start: lies outside the bounds polytope")
    for i, ob in enumerate(obstacles):
        if ob.planar() and not ob.is_bounded_nonempty_xy():
            raise EnvironmentFormatError(f"obstacles[{i}]: polytope is empty or unbounded")
        if np.all(ob.A @ start <= ob.b):
            raise EnvironmentFormatError(f"obstacles[{i}]: contains the start state")
    for cx, cy in [(goal[0], goal[2]), (goal[0], goal[3]), (goal[1], goal[2]), (goal[1], goal[3])]:
        if not bounds.contains(np.array([cx, cy, 0.0])):
            raise EnvironmentFormatError("goal: rectangle is not inside the bounds polytope")
    try:
        env.budget()
    except ValueError as e:
        raise EnvironmentFormatError(f"risk: {e}") from None
    return env
