"""Render a planner tree dump over its environment."""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .common import InputError, die, draw_env, load_env, load_json


def render_tree(env, tree, ax):
    draw_env(ax, env)
    for edge in tree.get("edges", []):
        poly = edge["polyline"]
        ax.plot([p[0] for p in poly], [p[1] for p in poly],
                color="#56B4E9", linewidth=0.6, zorder=2)
    return len(tree.get("edges", []))


def main(argv=None):
    ap = argparse.ArgumentParser(description="plot a tree dump")
    ap.add_argument("--in", dest="tree", required=True, help="tree dump JSON")
    ap.add_argument("--env", required=True, help="environment JSON")
    ap.add_argument("--out", required=True, help="output image path")
    args = ap.parse_args(argv)
    try:
        env = load_env(args.env)
        tree = load_json(args.tree)
        if "nodes" not in tree:
            raise InputError(f"{args.tree} is not a tree dump (missing nodes)")
        fig, ax = plt.subplots(figsize=(6, 6))
        n_edges = render_tree(env, tree, ax)
        ax.set_title(f"tree: {len(tree['nodes'])} nodes, {n_edges} edges")
        fig.savefig(args.out, dpi=150, bbox_inches="tight")
        plt.close(fig)
    except InputError as e:
        die(str(e))
    print(f"tree figure -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
