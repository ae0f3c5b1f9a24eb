"""Static SVG reports: BEV trajectory overlays and precision-recall curves.

SVG output is kept byte-reproducible: a fixed hash salt for element ids and
no embedded creation date.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "atlasbench"

import matplotlib.pyplot as plt
from matplotlib.patches import Polygon

from .bev_space import BevPoint
from .metrics import MetricReport, OrientedRect
from .scene_sim import Scene, world_to_ego


def _save(fig, path: str) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_bev_sample(
    scene: Scene,
    t0: int,
    gt_traj: list[BevPoint],
    pred_traj: list[BevPoint] | None,
    path: str,
    window: float = 40.0,
) -> None:
    """Ego-frame snapshot: lanes, agent boxes, ground-truth and predicted plans."""
    frame = scene.frames[t0]
    pos, yaw = frame.ego.position, frame.ego.yaw
    fig, ax = plt.subplots(figsize=(5, 5))

    for lane in frame.lanes:
        pts = [world_to_ego(p, pos, yaw) for p in lane.points]
        ax.plot([p.x for p in pts], [p.y for p in pts], color="0.8", lw=1.2, zorder=1)

    for agent in frame.agents:
        center = world_to_ego(agent.center, pos, yaw)
        rect = OrientedRect(center.x, center.y, agent.length, agent.width, agent.heading - yaw)
        ax.add_patch(Polygon(rect.corners(), closed=True, facecolor="#d28a8a", edgecolor="#a04040", lw=0.8, zorder=2))

    ego_rect = OrientedRect(0.0, 0.0, 4.084, 1.85, 0.0)
    ax.add_patch(Polygon(ego_rect.corners(), closed=True, facecolor="#8ab0d2", edgecolor="#2f5d8a", lw=0.8, zorder=3))

    gx = [0.0] + [p.x for p in gt_traj]
    gy = [0.0] + [p.y for p in gt_traj]
    ax.plot(gx, gy, "o-", color="#2e7d32", ms=3.5, lw=1.4, label="ground truth", zorder=4)
    if pred_traj is not None:
        px = [0.0] + [p.x for p in pred_traj]
        py = [0.0] + [p.y for p in pred_traj]
        ax.plot(px, py, "s--", color="#c62828", ms=3.5, lw=1.4, label="prediction", zorder=5)

    ax.set_xlim(-window, window)
    ax.set_ylim(-window, window)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m, right)")
    ax.set_ylabel("y (m, forward)")
    ax.set_title(f"{scene.scene_id} frame {t0} ({frame.command})")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, color="0.92", lw=0.6)
    fig.tight_layout()
    _save(fig, path)


def plot_pr_curves(report: MetricReport, path: str) -> None:
    """One panel per matching threshold; single-point curves render as markers."""
    curves = report.pr_curves.get("detection", {})
    if not curves:
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.text(0.5, 0.5, "no detection predictions", ha="center", va="center")
        ax.set_axis_off()
        _save(fig, path)
        return
    fig, axes = plt.subplots(1, len(curves), figsize=(3.2 * len(curves), 3.2), squeeze=False)
    for ax, (thr, points) in zip(axes[0], sorted(curves.items(), key=lambda kv: float(kv[0]))):
        recalls = [p[2] for p in points]
        precisions = [p[1] for p in points]
        if len(points) == 1:
            ax.plot(recalls, precisions, "o", color="#2f5d8a")
        else:
            ax.plot(recalls, precisions, "-o", color="#2f5d8a", ms=3)
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"threshold {thr} m", fontsize=9)
        ax.grid(True, color="0.92", lw=0.6)
    fig.tight_layout()
    _save(fig, path)
