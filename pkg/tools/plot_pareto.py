#!/usr/bin/env python3
"""
Plot replication frontiers and the min/max/error-free scatter.

Examples:
  plot_pareto.py results/*_frontier.csv -o pareto.png
  plot_pareto.py results/*_frontier.csv --scatter results/scatter.csv -o pareto.png
"""

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Add the src directory to the path so we can import qnn_fat
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from qnn_fat.evaluation import read_scatter_csv  # noqa: E402
from qnn_fat.replication import read_frontier_csv  # noqa: E402


def plot_frontiers(ax, paths):
    """One step line per frontier file; non-dominated points are marked."""
    for path in paths:
        points = read_frontier_csv(path)
        label = Path(path).stem.replace("_frontier", "")
        costs = [p.cost for p in points]
        errors = [p.worst_case_error for p in points]
        line = ax.step(costs, errors, where="post", label=label, alpha=0.8)[0]
        best = [p for p in points if not p.dominated]
        ax.scatter([p.cost for p in best], [p.worst_case_error for p in best],
                   color=line.get_color(), s=12)
    ax.set_xlabel("Hardware cost [LUT-equivalents]", fontsize=12, fontweight="bold")
    ax.set_ylabel("Worst-case error [%]", fontsize=12, fontweight="bold")
    ax.set_title("Worst-case error vs replication cost", fontsize=14, fontweight="bold")
    ax.grid(alpha=0.3, linestyle="--")
    ax.legend()


def plot_scatter(ax, path):
    for name, point in read_scatter_csv(path).items():
        ax.plot([point.min_acc, point.max_acc], [point.error_free] * 2, marker="o", label=name)
    ax.set_xlabel("Accuracy under a single stuck-at fault [%]", fontsize=12, fontweight="bold")
    ax.set_ylabel("Error-free accuracy [%]", fontsize=12, fontweight="bold")
    ax.set_title("Min / max accuracy per network", fontsize=14, fontweight="bold")
    ax.grid(alpha=0.3, linestyle="--")
    ax.legend()


def main():
    parser = argparse.ArgumentParser(description="Plot qnn-fat frontier and scatter files")
    parser.add_argument("frontiers", nargs="+", help="Frontier CSV files")
    parser.add_argument("--scatter", help="scatter.csv written by 'qnn-fat report'")
    parser.add_argument("-o", "--output", default="pareto.png",
                        help="Output image (default: pareto.png)")
    args = parser.parse_args()

    try:
        panels = 2 if args.scatter else 1
        fig, axes = plt.subplots(1, panels, figsize=(7 * panels, 6), squeeze=False)
        plot_frontiers(axes[0][0], args.frontiers)
        if args.scatter:
            plot_scatter(axes[0][1], args.scatter)
        fig.tight_layout()
        fig.savefig(args.output, dpi=150)
        plt.close(fig)
        print(f"Plot saved as: {args.output}")
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
