"""Reference plan over its environment, with start and goal conventions."""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .common import InputError, die, draw_env, load_env, load_plan


def main(argv=None):
    ap = argparse.ArgumentParser(description="plot a plan over its environment")
    ap.add_argument("--in", dest="plan", required=True, help="plan JSON")
    ap.add_argument("--env", required=True, help="environment JSON")
    ap.add_argument("--out", required=True, help="output image path")
    args = ap.parse_args(argv)
    try:
        env = load_env(args.env)
        means = load_plan(args.plan)
        fig, ax = plt.subplots(figsize=(6, 6))
        draw_env(ax, env)
        ax.plot(means[:, 0], means[:, 1], "--", color="#CC79A7", linewidth=1.5,
                zorder=3, label="reference")
        ax.plot([means[-1, 0]], [means[-1, 1]], marker="*", color="#CC79A7",
                markersize=12, zorder=4)
        ax.set_title(f"plan: {means.shape[0] - 1} steps")
        ax.legend(loc="lower right")
        fig.savefig(args.out, dpi=150, bbox_inches="tight")
        plt.close(fig)
    except InputError as e:
        die(str(e))
    print(f"path figure -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
