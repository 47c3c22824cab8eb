"""Figure rendering for reports: metric bars, training curves, planned paths.

All figures render through the Agg backend with empty PNG metadata so the
same run always produces the same bytes.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .evaluation import IterationCurve, MetricsRow  # noqa: E402
from .graph_planner import PathPlan  # noqa: E402
from .warehouse_env import SHELF, WarehouseMap  # noqa: E402

_BAR_METRICS = [("accuracy_ratio", "Accuracy ratio"), ("recall", "Recall"),
                ("f1", "F1"), ("robustness", "Robustness")]


def _save(fig, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", dpi=120, metadata={})
    plt.close(fig)


def save_metrics_chart(rows: dict[str, MetricsRow], path: Path) -> None:
    """Grouped bars: one cluster per metric, one bar per algorithm."""
    algos = list(rows)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / max(1, len(algos))
    x = np.arange(len(_BAR_METRICS))
    for i, algo in enumerate(algos):
        row = rows[algo]
        vals = [getattr(row, key) if getattr(row, key) is not None else 0.0
                for key, _ in _BAR_METRICS]
        ax.bar(x + i * width, vals, width, label=algo)
    ax.set_xticks(x + width * (len(algos) - 1) / 2)
    ax.set_xticklabels([label for _, label in _BAR_METRICS])
    ax.set_ylabel("percent")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.set_title("Benchmark metrics by algorithm")
    fig.tight_layout()
    _save(fig, path)


def save_iteration_curve(curve: IterationCurve, path: Path,
                         optimal: float | None = None) -> None:
    """Mean episode path length per training update, with the optional
    shortest-path reference line."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(curve.update_indices, curve.path_lengths, lw=1.2,
            label="mean path length")
    if curve.path_lengths:
        ax.axhline(curve.stabilized_level, color="tab:orange", ls="--", lw=1,
                   label=f"stabilized level ({curve.stabilized_level:.2f})")
    if optimal is not None:
        ax.axhline(optimal, color="tab:green", ls=":", lw=1.5,
                   label=f"shortest path ({optimal:.0f})")
    ax.set_xlabel("update")
    ax.set_ylabel("path length")
    ax.legend()
    ax.set_title("Path length over training")
    fig.tight_layout()
    _save(fig, path)


def save_plan_figure(wmap: WarehouseMap, plan: PathPlan, path: Path) -> None:
    """Grid occupancy with the planned route, start, goals, and obstacle loops."""
    fig, ax = plt.subplots(figsize=(6, 6 * wmap.height / max(1, wmap.width)))
    ax.imshow(wmap.grid == SHELF, cmap="Greys", origin="upper",
              vmin=0, vmax=1.6)
    if plan.cells:
        xs = [c[0] for c in plan.cells]
        ys = [c[1] for c in plan.cells]
        ax.plot(xs, ys, "-o", color="tab:blue", ms=3, lw=1.5, label="plan")
    ax.plot(*wmap.start, "s", color="tab:green", ms=9, label="start")
    for gx, gy in wmap.goals:
        ax.plot(gx, gy, "*", color="tab:red", ms=12)
    for spec in wmap.obstacle_specs:
        lx = [c[0] for c in spec.waypoint_loop]
        ly = [c[1] for c in spec.waypoint_loop]
        ax.plot(lx + lx[:1], ly + ly[:1], ":", color="tab:purple", lw=1)
    ax.set_xticks(range(wmap.width))
    ax.set_yticks(range(wmap.height))
    ax.grid(True, color="0.9", lw=0.5)
    ax.set_title(f"{wmap.name}: cost {plan.total_cost:g}")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
