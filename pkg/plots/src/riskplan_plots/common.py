"""Parsers and drawing helpers for the documented file formats.

These scripts deliberately reimplement the small amount of geometry they
need; they consume only the JSON/CSV files and never import the planner.
"""

from __future__ import annotations

import csv
import json
import sys

import numpy as np

# colorblind-safe palette (Okabe-Ito)
CONTROLLER_COLORS = {
    "openloop": "#E69F00",
    "lqr": "#56B4E9",
    "lqrm": "#009E73",
    "nmpc": "#CC79A7",
}
FALLBACK_COLORS = ["#0072B2", "#D55E00", "#F0E442", "#000000"]


class InputError(Exception):
    """Bad or missing input file; the scripts exit nonzero with the message."""


def die(message, code=1):
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(code)


def load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path} is not valid JSON: {e}") from None


def halfspaces_to_polygon(halfspaces):
    """Vertices of the bounded (x, y) region, counterclockwise."""
    A = np.array([h["a"][:2] for h in halfspaces], dtype=float)
    b = np.array([h["b"] for h in halfspaces], dtype=float)
    pts = []
    F = len(b)
    for i in range(F):
        for j in range(i + 1, F):
            M = np.array([A[i], A[j]])
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            p = np.linalg.solve(M, [b[i], b[j]])
            if np.all(A @ p <= b + 1e-9):
                pts.append(p)
    if len(pts) < 3:
        raise InputError("polytope has no bounded (x, y) region to draw")
    pts = np.array(pts)
    center = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    return pts[order]


def region_polygon(spec):
    if isinstance(spec, dict) and "rect" in spec:
        x0, x1, y0, y1 = spec["rect"]
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
    return halfspaces_to_polygon(spec)


def load_env(path):
    raw = load_json(path)
    for key in ("bounds", "obstacles", "goal", "start"):
        if key not in raw:
            raise InputError(f"environment file is missing {key!r}")
    return {
        "bounds": region_polygon(raw["bounds"]),
        "obstacles": [region_polygon(o) for o in raw["obstacles"]],
        "goal": raw["goal"]["rect"],
        "start": raw["start"],
    }


def draw_env(ax, env):
    from matplotlib.patches import Polygon, Rectangle

    bounds = env["bounds"]
    ax.add_patch(Polygon(bounds, closed=True, fill=False, edgecolor="black",
                         linewidth=1.5))
    for poly in env["obstacles"]:
        ax.add_patch(Polygon(poly, closed=True, facecolor="black"))
    x0, x1, y0, y1 = env["goal"]
    ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False,
                           edgecolor="#009E73", linestyle="--", linewidth=1.5))
    ax.plot([env["start"][0]], [env["start"][1]], marker="^", color="white",
            markeredgecolor="black", markersize=10, zorder=5)
    pad = 0.3
    ax.set_xlim(bounds[:, 0].min() - pad, bounds[:, 0].max() + pad)
    ax.set_ylim(bounds[:, 1].min() - pad, bounds[:, 1].max() + pad)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")


def load_results_csv(path, required=("controller", "noise_var", "collided")):
    try:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from None
    if not rows:
        raise InputError(f"{path} holds no result rows")
    for col in required:
        if col not in rows[0]:
            raise InputError(f"{path} is missing column {col!r}")
    return rows


def load_plan(path):
    recs = load_json(path)
    if not isinstance(recs, list) or not recs:
        raise InputError(f"{path} is not a plan record list")
    for key in ("k", "mean"):
        if key not in recs[0]:
            raise InputError(f"plan records are missing {key!r}")
    return np.array([r["mean"] for r in recs], dtype=float)
