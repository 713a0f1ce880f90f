"""SVG figures: planned paths with belief ellipses, execution traces, timing curves.

Figures are drawn with matplotlib's object API (no global pyplot state) and
saved without a timestamp and with a fixed id salt, so identical inputs give
identical bytes.
"""

from __future__ import annotations

import io
import math
from collections import defaultdict
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Ellipse, Polygon, Rectangle

from beltmp.world import WorldMap

ELLIPSE_GID = "belief-ellipse"

matplotlib.rcParams["svg.hashsalt"] = "beltmp"
matplotlib.rcParams["svg.fonttype"] = "none"


def covariance_ellipse(cov) -> tuple[float, float, float]:
    """One-sigma semi-axes (major, minor) and major-axis angle in degrees.

    Only the (x, y) block of ``cov`` is used.
    """
    block = np.asarray(cov, dtype=float)[:2, :2]
    block = 0.5 * (block + block.T)
    vals, vecs = np.linalg.eigh(block)
    vals = np.clip(vals, 0.0, None)
    major, minor = math.sqrt(vals[1]), math.sqrt(vals[0])
    angle = math.degrees(math.atan2(vecs[1, 1], vecs[0, 1]))
    return major, minor, angle


def _svg(fig: Figure) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def _draw_world(ax, world: WorldMap) -> None:
    b = world.bounds
    ax.add_patch(Rectangle((b.xmin, b.ymin), b.xmax - b.xmin, b.ymax - b.ymin, fill=False, lw=1.2, ec="black"))
    for poly in world.obstacles:
        ax.add_patch(Polygon(poly, closed=True, fc="0.35", ec="0.2", lw=0.3))
    for name in sorted(world.regions):
        r = world.regions[name]
        ax.add_patch(Rectangle((r.xmin, r.ymin), r.xmax - r.xmin, r.ymax - r.ymin, fc="#cfe8ff", ec="#5b8db8", lw=0.6, alpha=0.6))
        cx, cy = r.center
        ax.text(cx, cy, name.upper(), ha="center", va="center", fontsize=7, color="#1d4e7a")
    if len(world.landmark_xy):
        ax.plot(world.landmark_xy[:, 0], world.landmark_xy[:, 1], linestyle="none", marker="*", ms=9, color="#d4a017", mec="black", mew=0.4)
    ax.set_xlim(b.xmin - 0.5, b.xmax + 0.5)
    ax.set_ylim(b.ymin - 0.5, b.ymax + 0.5)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")


def _figure_for(world: WorldMap) -> tuple[Figure, object]:
    b = world.bounds
    w = 9.0
    h = max(3.0, w * (b.ymax - b.ymin) / max(b.xmax - b.xmin, 1e-9) + 0.6)
    fig = Figure(figsize=(w, h))
    return fig, fig.add_subplot(1, 1, 1)


def render_plan(report: dict, world: WorldMap, roadmap_nodes: Optional[np.ndarray] = None, title: Optional[str] = None) -> str:
    """Map, roadmap nodes, planned path and a one-sigma ellipse per stored belief."""
    if hasattr(report, "to_dict"):
        report = report.to_dict()
    fig, ax = _figure_for(world)
    _draw_world(ax, world)
    if roadmap_nodes is not None and len(roadmap_nodes):
        nodes = np.asarray(roadmap_nodes)
        ax.plot(nodes[:, 0], nodes[:, 1], linestyle="none", marker=".", ms=1.5, color="0.55")
    k = 0
    for step in report.get("steps", []):
        nav = step.get("navigation")
        if not nav:
            continue
        poses = np.asarray(nav["poses"], dtype=float).reshape(-1, 3)
        ax.plot(poses[:, 0], poses[:, 1], color="#c0392b", lw=1.2)
        for b in nav["beliefs"]:
            major, minor, angle = covariance_ellipse(b["cov"])
            e = Ellipse(tuple(b["mean"][:2]), 2 * major, 2 * minor, angle=angle, fill=False, ec="#2c7fb8", lw=0.7)
            e.set_gid(f"{ELLIPSE_GID}-{k}")
            ax.add_patch(e)
            k += 1
    if title is None and report.get("config") is not None:
        title = f"{report.get('scenario', '')} config {report.get('config')}  cost {report.get('total_cost')}"
    if title:
        ax.set_title(title, fontsize=9)
    return _svg(fig)


def count_ellipses(svg: str) -> int:
    return svg.count(f'id="{ELLIPSE_GID}-')


def render_traces(traces, world: WorldMap, report: Optional[dict] = None) -> str:
    """True-state traces of simulated runs drawn over the map and planned path."""
    fig, ax = _figure_for(world)
    _draw_world(ax, world)
    if report is not None:
        if hasattr(report, "to_dict"):
            report = report.to_dict()
        for step in report.get("steps", []):
            nav = step.get("navigation")
            if nav:
                poses = np.asarray(nav["poses"], dtype=float).reshape(-1, 3)
                ax.plot(poses[:, 0], poses[:, 1], color="#c0392b", lw=1.4)
    for t in traces:
        xy = np.array([s.true_pose[:2] for s in t.steps])
        ax.plot(xy[:, 0], xy[:, 1], lw=0.5, alpha=0.7, color="#2ca25f" if t.success else "#7b3294")
    ax.set_title(f"{len(traces)} simulated runs", fontsize=9)
    return _svg(fig)


def _mean_curve(xs: Sequence[float], ys: Sequence[float]) -> tuple[list[float], list[float]]:
    groups = defaultdict(list)
    for x, y in zip(xs, ys):
        groups[x].append(y)
    keys = sorted(groups)
    return keys, [float(np.mean(groups[k])) for k in keys]


def plot_time_vs_targets(rows: Sequence[dict]) -> str:
    """Mean planning time against target count, one curve per (config, density)."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(1, 1, 1)
    series = defaultdict(lambda: ([], []))
    for r in rows:
        xs, ys = series[(r["config"], r["d"])]
        xs.append(r["c"])
        ys.append(r["time_s"])
    for (config, d), (xs, ys) in sorted(series.items()):
        kx, ky = _mean_curve(xs, ys)
        ax.plot(kx, ky, marker="o", label=f"config {config}, d={d:g}")
    ax.set_xlabel("number of target cubicles")
    ax.set_ylabel("planning time [s]")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _svg(fig)


def plot_time_vs_length(rows: Sequence[dict]) -> str:
    """Planning time against the number of actions in the returned plan."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(1, 1, 1)
    series = defaultdict(lambda: ([], []))
    for r in rows:
        if r.get("plan_length") is None:
            continue
        xs, ys = series[r["config"]]
        xs.append(r["plan_length"])
        ys.append(r["time_s"])
    for config, (xs, ys) in sorted(series.items()):
        kx, ky = _mean_curve(xs, ys)
        ax.plot(kx, ky, marker="s", label=f"config {config}")
    ax.set_xlabel("plan length [actions]")
    ax.set_ylabel("planning time [s]")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _svg(fig)


__all__ = [
    "ELLIPSE_GID",
    "count_ellipses",
    "covariance_ellipse",
    "plot_time_vs_length",
    "plot_time_vs_targets",
    "render_plan",
    "render_traces",
]
