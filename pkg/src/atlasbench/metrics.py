"""Open-loop planning and perception metrics.

Planning follows the usual open-loop protocol: six waypoints at 0.5 s
spacing, scored at 1 s / 2 s / 3 s horizons. The default L2 convention
averages per-waypoint errors up to each horizon (the alternative
value-at-horizon convention sits behind a flag), and the collision rate
places an oriented ego footprint at every waypoint and tests exact
rectangle intersection against every agent box of the matching frame.

Detection and lane quality are precision/recall/F1 under one-to-one greedy
matching: center distance for objects, discrete Frechet distance for lane
centerlines. Micro-aggregation over samples accumulates TP / prediction /
ground-truth counts before forming the ratios.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bev_space import BevPoint
from .qa_codec import (
    AnswerParseError,
    ChainSpec,
    DEFAULT_CHAIN,
    detection_facts,
    lane_facts,
    parse_detection_answer,
    parse_lane_answer,
    parse_planning_answer,
)
from .scene_sim import PLAN_STEPS, Scene, ego_to_world, ground_truth_plan, heading_forward, heading_right

HORIZON_STEPS = {"1s": 2, "2s": 4, "3s": 6}
DETECTION_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
LANE_THRESHOLDS = (1.0, 2.0, 3.0)
L2_CONVENTIONS = ("stp3", "at-horizon")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EgoFootprint:
    length: float = 4.084
    width: float = 1.85

    def __post_init__(self) -> None:
        if self.length <= 0 or self.width <= 0:
            raise ValueError("footprint dimensions must be positive")


def f1_from_pr(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both vanish."""
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


# ---------------------------------------------------------------------------
# L2
# ---------------------------------------------------------------------------

def l2_horizons(
    pred: Sequence[Sequence[float]],
    gt: Sequence[Sequence[float]],
    convention: str = "stp3",
) -> dict[str, float]:
    """Per-horizon L2 error between a predicted and ground-truth trajectory.

    "stp3" averages the per-waypoint errors up to and including each horizon;
    "at-horizon" reports the error at the horizon waypoint itself. The "avg"
    entry is always the arithmetic mean of the three horizon values.
    """
    if len(pred) != PLAN_STEPS or len(gt) != PLAN_STEPS:
        raise ValueError(f"trajectories must have {PLAN_STEPS} waypoints")
    if convention not in L2_CONVENTIONS:
        raise ValueError(f"unknown L2 convention {convention!r}")
    errors = [math.hypot(p[0] - g[0], p[1] - g[1]) for p, g in zip(pred, gt)]
    out = {}
    for name, steps in HORIZON_STEPS.items():
        if convention == "stp3":
            out[name] = sum(errors[:steps]) / steps
        else:
            out[name] = errors[steps - 1]
    out["avg"] = (out["1s"] + out["2s"] + out["3s"]) / 3.0
    return out


# ---------------------------------------------------------------------------
# Oriented rectangles and the collision rate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrientedRect:
    cx: float
    cy: float
    length: float  # extent along the forward axis
    width: float  # extent along the right axis
    heading: float

    def corners(self) -> np.ndarray:
        f = np.array(heading_forward(self.heading))
        r = np.array(heading_right(self.heading))
        c = np.array([self.cx, self.cy])
        hl, hw = 0.5 * self.length, 0.5 * self.width
        return np.array([c + hl * f + hw * r, c + hl * f - hw * r, c - hl * f - hw * r, c - hl * f + hw * r])


def sat_margin(a: OrientedRect, b: OrientedRect) -> float:
    """Signed separation from the 4-axis SAT test.

    Positive: the largest gap found on a separating axis. Negative: the
    rectangles overlap on every axis; magnitude is the smallest overlap
    (an approximate penetration depth).
    """
    if min(a.length, a.width, b.length, b.width) <= 0:
        raise ValueError("rectangle dimensions must be positive")
    ca, cb = a.corners(), b.corners()
    axes = [
        heading_forward(a.heading),
        heading_right(a.heading),
        heading_forward(b.heading),
        heading_right(b.heading),
    ]
    best_gap = -math.inf
    min_overlap = math.inf
    for ax in axes:
        axis = np.array(ax)
        pa = ca @ axis
        pb = cb @ axis
        gap = max(pb.min() - pa.max(), pa.min() - pb.max())
        if gap > 0:
            best_gap = max(best_gap, gap)
        else:
            min_overlap = min(min_overlap, -gap)
    return best_gap if best_gap > -math.inf else -min_overlap


def rect_intersects(a: OrientedRect, b: OrientedRect) -> bool:
    """Exact oriented-rectangle intersection (touching counts)."""
    return sat_margin(a, b) <= 0


@dataclass
class PlanSample:
    scene: Scene
    frame: int
    trajectory: list[BevPoint]  # ego frame at `frame`


def _ego_rects_world(sample: PlanSample, footprint: EgoFootprint) -> list[OrientedRect]:
    """Ego footprint placed at each waypoint, heading taken from the chord."""
    ego = sample.scene.frames[sample.frame].ego
    rects = []
    prev = BevPoint(0.0, 0.0)
    heading_ego = 0.0  # ego-frame heading; 0 means "straight ahead"
    for wp in sample.trajectory:
        dx, dy = wp.x - prev.x, wp.y - prev.y
        if math.hypot(dx, dy) > 1e-9:
            heading_ego = math.atan2(-dx, dy)
        world = ego_to_world(wp, ego.position, ego.yaw)
        rects.append(
            OrientedRect(world.x, world.y, footprint.length, footprint.width, ego.yaw + heading_ego)
        )
        prev = wp
    return rects


def collision_rate(
    samples: Sequence[PlanSample], footprint: EgoFootprint = EgoFootprint()
) -> dict[str, float]:
    """Percent of samples whose footprint hits any agent box within each horizon."""
    if not samples:
        raise EvaluationError("no planning samples to evaluate")
    hits = {name: 0 for name in HORIZON_STEPS}
    for sample in samples:
        if len(sample.trajectory) != PLAN_STEPS:
            raise EvaluationError(f"trajectory must have {PLAN_STEPS} waypoints")
        rects = _ego_rects_world(sample, footprint)
        first_hit = None
        for k, rect in enumerate(rects):
            frame_idx = sample.frame + k + 1
            if frame_idx >= len(sample.scene.frames):
                raise EvaluationError(
                    f"scene {sample.scene.scene_id}: no agent data at frame {frame_idx}"
                )
            agents = sample.scene.frames[frame_idx].agents
            if any(
                rect_intersects(rect, OrientedRect(a.center.x, a.center.y, a.length, a.width, a.heading))
                for a in agents
            ):
                first_hit = k
                break
        if first_hit is not None:
            for name, steps in HORIZON_STEPS.items():
                if first_hit < steps:
                    hits[name] += 1
    out = {name: 100.0 * hits[name] / len(samples) for name in HORIZON_STEPS}
    out["avg"] = (out["1s"] + out["2s"] + out["3s"]) / 3.0
    return out


# ---------------------------------------------------------------------------
# Detection F1 and PR curves
# ---------------------------------------------------------------------------

def _greedy_match_count(
    preds: Sequence[tuple[str, Sequence[float]]],
    gts: Sequence[tuple[str, Sequence[float]]],
    threshold: float,
) -> int:
    """One-to-one greedy matching of same-category pairs by ascending distance."""
    pairs = []
    for i, (cat_p, pp) in enumerate(preds):
        for j, (cat_g, pg) in enumerate(gts):
            if cat_p != cat_g:
                continue
            d = math.hypot(pp[0] - pg[0], pp[1] - pg[1])
            if d <= threshold:
                pairs.append((d, i, j))
    pairs.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    tp = 0
    for _, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        tp += 1
    return tp


def detection_counts(
    preds: Sequence[tuple[str, Sequence[float]]],
    gts: Sequence[tuple[str, Sequence[float]]],
    threshold: float,
) -> tuple[int, int, int]:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return _greedy_match_count(preds, gts, threshold), len(preds), len(gts)


def _prf(tp: int, n_pred: int, n_gt: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gt if n_gt else 0.0
    return p, r, f1_from_pr(p, r)


def detection_f1(
    preds: Sequence[tuple[str, Sequence[float]]],
    gts: Sequence[tuple[str, Sequence[float]]],
    threshold: float,
) -> tuple[float, float, float]:
    """(precision, recall, F1) for one prediction/ground-truth set."""
    tp, n_pred, n_gt = detection_counts(preds, gts, threshold)
    return _prf(tp, n_pred, n_gt)


def pr_curve(
    preds: Sequence[tuple[str, Sequence[float], float | None]],
    gts: Sequence[tuple[str, Sequence[float]]],
    threshold: float,
) -> list[tuple[float | None, float, float]]:
    """(confidence cut, precision, recall) points, cuts descending.

    Predictions without confidences yield the single point over all
    predictions, with a null cut.
    """
    confs = sorted({c for _, _, c in preds if c is not None}, reverse=True)
    bare = [(cat, pt) for cat, pt, _ in preds]
    if not confs:
        p, r, _ = detection_f1(bare, gts, threshold)
        return [(None, p, r)]
    points = []
    for cut in confs:
        kept = [(cat, pt) for cat, pt, c in preds if c is not None and c >= cut]
        p, r, _ = detection_f1(kept, gts, threshold)
        points.append((cut, p, r))
    return points


# ---------------------------------------------------------------------------
# Lane F1 via discrete Frechet distance
# ---------------------------------------------------------------------------

def frechet(poly_a: Sequence[Sequence[float]], poly_b: Sequence[Sequence[float]]) -> float:
    """Discrete Frechet distance via dynamic programming."""
    a = np.asarray(poly_a, dtype=float)
    b = np.asarray(poly_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("polylines must be non-empty")
    d = np.sqrt(((a[:, None, :2] - b[None, :, :2]) ** 2).sum(axis=2))
    n, m = d.shape
    ca = np.empty((n, m))
    ca[0, 0] = d[0, 0]
    for i in range(1, n):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
    for j in range(1, m):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, n):
        for j in range(1, m):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), d[i, j])
    return float(ca[n - 1, m - 1])


def resample_polyline(points: Sequence[Sequence[float]], n: int = 11) -> np.ndarray:
    """Resample a polyline to n points uniformly spaced by arc length."""
    pts = np.asarray(points, dtype=float)
    seg = np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0:
        return np.repeat(pts[:1], n, axis=0)
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, pts.shape[1]))
    for dim in range(pts.shape[1]):
        out[:, dim] = np.interp(targets, cum, pts[:, dim])
    return out


def lane_counts(
    preds: Sequence[Sequence[Sequence[float]]],
    gts: Sequence[Sequence[Sequence[float]]],
    threshold: float,
) -> tuple[int, int, int]:
    """Greedy one-to-one matching of centerlines under a Frechet threshold."""
    rp = [resample_polyline(p) for p in preds]
    rg = [resample_polyline(g) for g in gts]
    pairs = []
    for i, a in enumerate(rp):
        for j, b in enumerate(rg):
            dist = frechet(a, b)
            if dist <= threshold:
                pairs.append((dist, i, j))
    pairs.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    tp = 0
    for _, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        tp += 1
    return tp, len(preds), len(gts)


def lane_f1(
    preds: Sequence[Sequence[Sequence[float]]],
    gts: Sequence[Sequence[Sequence[float]]],
    thresholds: Sequence[float] = LANE_THRESHOLDS,
) -> tuple[float, float, float]:
    """Mean (precision, recall, F1) over the matching thresholds."""
    ps, rs, fs = [], [], []
    for thr in thresholds:
        p, r, f = _prf(*lane_counts(preds, gts, thr))
        ps.append(p)
        rs.append(r)
        fs.append(f)
    k = len(thresholds)
    return sum(ps) / k, sum(rs) / k, sum(fs) / k


# ---------------------------------------------------------------------------
# Prediction files and the aggregated report
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    method: str = "model"
    l2: dict[str, float] | None = None
    collision: dict[str, float] | None = None
    f1_tables: dict = field(default_factory=dict)
    pr_curves: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "method": self.method,
            "l2": self.l2,
            "collision": self.collision,
            "f1_tables": self.f1_tables,
            "pr_curves": self.pr_curves,
            "counts": self.counts,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "MetricReport":
        return cls(
            method=obj.get("method", "model"),
            l2=obj.get("l2"),
            collision=obj.get("collision"),
            f1_tables=obj.get("f1_tables", {}),
            pr_curves=obj.get("pr_curves", {}),
            counts=obj.get("counts", {}),
        )

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path: str) -> None:
        """One row in the planning-table layout: method, L2 and collision per horizon."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["method", "l2_1s", "l2_2s", "l2_3s", "l2_avg", "col_1s", "col_2s", "col_3s", "col_avg"]
            )
            l2 = self.l2 or {}
            col = self.collision or {}
            writer.writerow(
                [self.method]
                + [f"{l2.get(h, float('nan')):.4f}" for h in ("1s", "2s", "3s", "avg")]
                + [f"{col.get(h, float('nan')):.4f}" for h in ("1s", "2s", "3s", "avg")]
            )


def load_predictions(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise EvaluationError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            if "scene_id" not in obj or "frame" not in obj or "task" not in obj:
                raise EvaluationError(f"line {lineno}: prediction needs scene_id, frame, task")
            records.append(obj)
    return records


def _planning_trajectory(record: dict, chain: ChainSpec) -> tuple[list[BevPoint] | None, bool]:
    """Decoded trajectory from a record; (None, True) marks a malformed answer."""
    if record.get("waypoints") is not None:
        wps = record["waypoints"]
        if len(wps) != PLAN_STEPS:
            return None, True
        return [BevPoint(float(p[0]), float(p[1])) for p in wps], False
    try:
        parsed = parse_planning_answer(record.get("answer_text", ""), chain)
    except AnswerParseError:
        return None, True
    return list(parsed.waypoints), False


def evaluate_predictions(
    records: Sequence[dict],
    scenes: Sequence[Scene],
    chain: ChainSpec = DEFAULT_CHAIN,
    footprint: EgoFootprint = EgoFootprint(),
    l2_convention: str = "stp3",
    method: str = "model",
) -> MetricReport:
    """Score a prediction file against its scenes.

    Malformed planning answers fall back to the constant-position trajectory
    (and are counted); detection/lane records with malformed answers count
    as empty prediction sets.
    """
    if not records:
        raise EvaluationError("no predictions to evaluate")
    by_id = {s.scene_id: s for s in scenes}

    plan_samples: list[PlanSample] = []
    l2_sums = {"1s": 0.0, "2s": 0.0, "3s": 0.0}
    malformed = 0
    det_counts = {thr: [0, 0, 0] for thr in DETECTION_THRESHOLDS}
    det_preds_all: list[tuple[str, tuple[float, float], float | None]] = []
    det_gts_all: list[tuple[str, tuple[float, float]]] = []
    lane_accum = {thr: [0, 0, 0] for thr in LANE_THRESHOLDS}
    n_det = n_lane = 0

    for record in records:
        scene = by_id.get(record["scene_id"])
        if scene is None:
            raise EvaluationError(f"unknown scene id {record['scene_id']!r}")
        t0 = int(record["frame"])
        task = record["task"]
        if task == "planning":
            rec_chain = ChainSpec.from_string(record["chain"]) if record.get("chain") else chain
            traj, bad = _planning_trajectory(record, rec_chain)
            if bad:
                malformed += 1
                traj = [BevPoint(0.0, 0.0)] * PLAN_STEPS
            gt = ground_truth_plan(scene, t0)
            horizons = l2_horizons(traj, gt, l2_convention)
            for name in l2_sums:
                l2_sums[name] += horizons[name]
            plan_samples.append(PlanSample(scene=scene, frame=t0, trajectory=traj))
        elif task == "detection":
            n_det += 1
            if record.get("detections") is not None:
                preds = [(cat, (float(p[0]), float(p[1]))) for cat, p in record["detections"]]
            else:
                try:
                    preds = [(c, (pt.x, pt.y)) for c, pt in parse_detection_answer(record.get("answer_text", "")).points]
                except AnswerParseError:
                    malformed += 1
                    preds = []
            gts = [(c, (pt.x, pt.y)) for c, pt in detection_facts(scene.frames[t0])]
            for thr in DETECTION_THRESHOLDS:
                tp, np_, ng = detection_counts(preds, gts, thr)
                det_counts[thr][0] += tp
                det_counts[thr][1] += np_
                det_counts[thr][2] += ng
            det_preds_all.extend((cat, pt, None) for cat, pt in preds)
            det_gts_all.extend(gts)
        elif task == "lane":
            n_lane += 1
            if record.get("lanes") is not None:
                preds_l = [[(float(p[0]), float(p[1])) for p in line] for line in record["lanes"]]
            else:
                try:
                    preds_l = [
                        [(p.x, p.y) for p in line]
                        for line in parse_lane_answer(record.get("answer_text", "")).polylines
                    ]
                except AnswerParseError:
                    malformed += 1
                    preds_l = []
            gts_l = [[(p.x, p.y) for p in line] for line in lane_facts(scene.frames[t0])]
            for thr in LANE_THRESHOLDS:
                tp, np_, ng = lane_counts(preds_l, gts_l, thr)
                lane_accum[thr][0] += tp
                lane_accum[thr][1] += np_
                lane_accum[thr][2] += ng
        elif task == "caption":
            continue
        else:
            raise EvaluationError(f"unknown task {task!r}")

    report = MetricReport(method=method)
    report.counts = {
        "planning_samples": len(plan_samples),
        "detection_samples": n_det,
        "lane_samples": n_lane,
        "malformed_answers": malformed,
    }
    if plan_samples:
        n = len(plan_samples)
        l2 = {name: l2_sums[name] / n for name in l2_sums}
        l2["avg"] = (l2["1s"] + l2["2s"] + l2["3s"]) / 3.0
        report.l2 = l2
        report.collision = collision_rate(plan_samples, footprint)
    if n_det:
        table = {}
        for thr in DETECTION_THRESHOLDS:
            p, r, f = _prf(*det_counts[thr])
            table[str(thr)] = {"precision": p, "recall": r, "f1": f}
        report.f1_tables["detection"] = table
        report.pr_curves["detection"] = {
            str(thr): [
                [cut, p, r] for cut, p, r in pr_curve(det_preds_all, det_gts_all, thr)
            ]
            for thr in DETECTION_THRESHOLDS
        }
    if n_lane:
        per_thr = {}
        fs, ps, rs = [], [], []
        for thr in LANE_THRESHOLDS:
            p, r, f = _prf(*lane_accum[thr])
            per_thr[str(thr)] = {"precision": p, "recall": r, "f1": f}
            ps.append(p)
            rs.append(r)
            fs.append(f)
        k = len(LANE_THRESHOLDS)
        report.f1_tables["lane"] = {
            "thresholds": per_thr,
            "mean": {"precision": sum(ps) / k, "recall": sum(rs) / k, "f1": sum(fs) / k},
        }
    return report
