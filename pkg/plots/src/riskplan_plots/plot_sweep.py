"""Failure counts per controller across noise levels, from a results CSV.

Writes the full-axis figure to --out and a truncated-axis companion (the
largest noise level dropped) next to it with a `_zoom` suffix.
"""

from __future__ import annotations

import argparse
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .common import CONTROLLER_COLORS, FALLBACK_COLORS, InputError, die, load_results_csv


def failure_counts(rows):
    """{controller: [(noise_var, failures, trials)]} sorted by noise."""
    table = {}
    for r in rows:
        key = (r["controller"], float(r["noise_var"]))
        fails, total = table.get(key, (0, 0))
        table[key] = (fails + int(r["collided"]), total + 1)
    out = {}
    for (name, var), (fails, total) in sorted(table.items(), key=lambda t: t[0][1]):
        out.setdefault(name, []).append((var, fails, total))
    return out


def render(curves, ax):
    spare = iter(FALLBACK_COLORS)
    for name, pts in curves.items():
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        color = CONTROLLER_COLORS.get(name) or next(spare)
        ax.plot(xs, ys, marker="o", label=name, color=color)
    ax.set_xlabel("noise variance")
    ax.set_ylabel("failures")
    ax.legend()
    ax.grid(True, alpha=0.3)


def main(argv=None):
    ap = argparse.ArgumentParser(description="plot failures vs noise level")
    ap.add_argument("--in", dest="results", required=True, help="results CSV")
    ap.add_argument("--out", required=True, help="output image path")
    args = ap.parse_args(argv)
    try:
        rows = load_results_csv(args.results)
        curves = failure_counts(rows)
        trials = max(t for pts in curves.values() for _, _, t in pts)

        fig, ax = plt.subplots(figsize=(7, 5))
        render(curves, ax)
        ax.set_title(f"failures out of {trials} trials")
        fig.savefig(args.out, dpi=150, bbox_inches="tight")
        plt.close(fig)

        # truncated-axis variant: drop the top noise level to spread the rest
        levels = sorted({var for pts in curves.values() for var, _, _ in pts})
        zoomed = {name: [p for p in pts if len(levels) < 2 or p[0] < levels[-1]]
                  for name, pts in curves.items()}
        root, ext = os.path.splitext(args.out)
        zoom_path = f"{root}_zoom{ext or '.png'}"
        fig, ax = plt.subplots(figsize=(7, 5))
        render(zoomed, ax)
        ax.set_title(f"failures out of {trials} trials (truncated axis)")
        fig.savefig(zoom_path, dpi=150, bbox_inches="tight")
        plt.close(fig)
    except InputError as e:
        die(str(e))
    print(f"sweep figures -> {args.out}, {zoom_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
