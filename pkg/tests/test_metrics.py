import json
import math
import random

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from atlasbench.bev_space import BevPoint
from atlasbench.metrics import (
    EgoFootprint,
    EvaluationError,
    MetricReport,
    OrientedRect,
    PlanSample,
    collision_rate,
    detection_f1,
    evaluate_predictions,
    f1_from_pr,
    frechet,
    l2_horizons,
    lane_f1,
    pr_curve,
    rect_intersects,
    resample_polyline,
    sat_margin,
)
from atlasbench.qa_codec import build_dataset
from atlasbench.scene_sim import (
    AgentBox,
    EgoState,
    Frame,
    LaneCenterline,
    Scene,
    generate_scenes,
    ground_truth_plan,
    wrap_angle,
)


def _scene_with_static_agent(agent_xy, n=10, ego_speed=0.0):
    frames = []
    for k in range(n):
        y = ego_speed * 0.5 * k
        frames.append(
            Frame(
                t=0.5 * k,
                ego=EgoState(BevPoint(0.0, y), (0.0, ego_speed), (0.0, 0.0), 0.0, []),
                agents=[AgentBox(BevPoint(*agent_xy), 4.0, 2.0, 0.0, "car", "a0")],
                lanes=[LaneCenterline([BevPoint(0, -45), BevPoint(0, -15), BevPoint(0, 15), BevPoint(0, 45)])],
                command="go_straight",
            )
        )
    return Scene(scene_id="unit", frames=frames)


class TestF1FromPr:
    @pytest.mark.parametrize(
        "p,r,expected",
        [(22.7, 41.3, 29.3), (27.2, 74.0, 39.8), (50.6, 55.7, 53.0)],
    )
    def test_reference_triples(self, p, r, expected):
        assert f1_from_pr(p, r) == pytest.approx(expected, abs=0.05)

    def test_zero_case(self):
        assert f1_from_pr(0.0, 0.0) == 0.0

    def test_harmonic_bounds_and_formula(self):
        rng = random.Random(0)
        for _ in range(500):
            p, r = rng.uniform(0.01, 1), rng.uniform(0.01, 1)
            f = f1_from_pr(p, r)
            assert min(p, r) - 1e-12 <= f <= 2 * min(p, r) + 1e-12
            assert abs(f - 2 * p * r / (p + r)) <= 1e-12


class TestL2Horizons:
    def test_perfect_prediction(self):
        traj = [BevPoint(0, k) for k in range(1, 7)]
        out = l2_horizons(traj, traj)
        assert out == {"1s": 0.0, "2s": 0.0, "3s": 0.0, "avg": 0.0}

    def test_constant_offset(self):
        gt = [BevPoint(0, k) for k in range(1, 7)]
        pred = [BevPoint(p.x + 0.3, p.y + 0.4) for p in gt]
        out = l2_horizons(pred, gt)
        for key in ("1s", "2s", "3s", "avg"):
            assert abs(out[key] - 0.5) <= 1e-12

    def test_error_only_at_three_seconds(self):
        gt = [BevPoint(0, k) for k in range(1, 7)]
        pred = list(gt)
        pred[5] = BevPoint(gt[5].x + 0.6, gt[5].y)
        out = l2_horizons(pred, gt)
        assert abs(out["1s"]) <= 1e-12
        assert abs(out["2s"]) <= 1e-12
        assert abs(out["3s"] - 0.1) <= 1e-12

    def test_at_horizon_convention(self):
        gt = [BevPoint(0, k) for k in range(1, 7)]
        pred = list(gt)
        pred[5] = BevPoint(gt[5].x + 0.6, gt[5].y)
        out = l2_horizons(pred, gt, convention="at-horizon")
        assert out["1s"] == 0.0 and out["2s"] == 0.0
        assert abs(out["3s"] - 0.6) <= 1e-12

    def test_translation_invariance_and_scaling(self):
        rng = random.Random(1)
        gt = [BevPoint(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(6)]
        pred = [BevPoint(p.x + rng.uniform(-1, 1), p.y + rng.uniform(-1, 1)) for p in gt]
        base = l2_horizons(pred, gt)
        shift = (3.3, -7.7)
        shifted = l2_horizons(
            [BevPoint(p.x + shift[0], p.y + shift[1]) for p in pred],
            [BevPoint(p.x + shift[0], p.y + shift[1]) for p in gt],
        )
        scaled = l2_horizons(
            [BevPoint(2 * p.x, 2 * p.y) for p in pred], [BevPoint(2 * p.x, 2 * p.y) for p in gt]
        )
        for key in base:
            assert shifted[key] == pytest.approx(base[key], abs=1e-9)
            assert scaled[key] == pytest.approx(2 * base[key], rel=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            l2_horizons([BevPoint(0, 0)] * 5, [BevPoint(0, 0)] * 6)


def point_in_rect(points: np.ndarray, rect: OrientedRect) -> np.ndarray:
    f = np.array([-math.sin(rect.heading), math.cos(rect.heading)])
    r = np.array([math.cos(rect.heading), math.sin(rect.heading)])
    d = points - np.array([rect.cx, rect.cy])
    return (np.abs(d @ f) <= rect.length / 2) & (np.abs(d @ r) <= rect.width / 2)


def rasterization_overlap(a: OrientedRect, b: OrientedRect, cell: float = 0.01) -> bool:
    """Cell-center rasterization oracle over the intersection of bounding boxes."""
    ca, cb = a.corners(), b.corners()
    lo = np.maximum(ca.min(axis=0), cb.min(axis=0)) - cell
    hi = np.minimum(ca.max(axis=0), cb.max(axis=0)) + cell
    if (hi <= lo).any():
        return False
    xs = np.arange(lo[0], hi[0] + cell, cell)
    ys = np.arange(lo[1], hi[1] + cell, cell)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return bool((point_in_rect(pts, a) & point_in_rect(pts, b)).any())


class TestRectIntersects:
    def test_identical(self):
        r = OrientedRect(1.0, 2.0, 4.0, 2.0, 0.3)
        assert rect_intersects(r, r)

    def test_translated_apart_along_shared_axis(self):
        a = OrientedRect(0, 0, 4.0, 2.0, 0.0)
        b = OrientedRect(0, 8.0, 4.0, 2.0, 0.0)
        assert not rect_intersects(a, b)

    def test_one_centimeter_gap_and_overlap(self):
        a = OrientedRect(0, 0, 2.0, 1.0, 0.0)
        assert not rect_intersects(a, OrientedRect(0, 2.01, 2.0, 1.0, 0.0))
        assert rect_intersects(a, OrientedRect(0, 1.99, 2.0, 1.0, 0.0))

    def test_touching_counts(self):
        a = OrientedRect(0, 0, 2.0, 1.0, 0.0)
        assert rect_intersects(a, OrientedRect(0, 2.0, 2.0, 1.0, 0.0))

    def test_rotated_cross(self):
        a = OrientedRect(0, 0, 6.0, 0.5, 0.0)
        b = OrientedRect(0, 0, 6.0, 0.5, math.pi / 2)
        assert rect_intersects(a, b)

    def test_against_rasterization_oracle_sample(self):
        rng = np.random.default_rng(0)
        agree = total = 0
        for _ in range(150):
            a = OrientedRect(0, 0, rng.uniform(1, 5), rng.uniform(0.5, 3), rng.uniform(-3.14, 3.14))
            b = OrientedRect(
                rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(1, 5), rng.uniform(0.5, 3),
                rng.uniform(-3.14, 3.14),
            )
            if abs(sat_margin(a, b)) <= 0.02:
                continue
            total += 1
            agree += rect_intersects(a, b) == rasterization_overlap(a, b)
        assert total > 50
        assert agree == total

    def test_degenerate_dimensions_rejected(self):
        with pytest.raises(ValueError):
            sat_margin(OrientedRect(0, 0, 0.0, 1.0, 0.0), OrientedRect(0, 0, 1.0, 1.0, 0.0))


def _rigid_transform_scene(scene: Scene, angle: float, shift) -> Scene:
    c, s = math.cos(angle), math.sin(angle)

    def rot(p):
        return BevPoint(c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1])

    def rotv(v):
        return (c * v[0] - s * v[1], s * v[0] + c * v[1])

    frames = []
    for f in scene.frames:
        frames.append(
            Frame(
                t=f.t,
                ego=EgoState(
                    rot(f.ego.position), rotv(f.ego.velocity), rotv(f.ego.acceleration),
                    wrap_angle(f.ego.yaw + angle), [rot(p) for p in f.ego.history],
                ),
                agents=[
                    AgentBox(rot(a.center), a.length, a.width, wrap_angle(a.heading + angle), a.category, a.id)
                    for a in f.agents
                ],
                lanes=[LaneCenterline([rot(p) for p in lane.points]) for lane in f.lanes],
                command=f.command,
            )
        )
    return Scene(scene_id=scene.scene_id, frames=frames)


class TestCollisionRate:
    def test_far_agents_zero_rate(self):
        scene = _scene_with_static_agent((30.0, -30.0))
        sample = PlanSample(scene, 0, [BevPoint(0, k) for k in range(1, 7)])
        out = collision_rate([sample])
        assert out == {"1s": 0.0, "2s": 0.0, "3s": 0.0, "avg": 0.0}

    def test_waypoint_on_agent_center_hits_all_horizons(self):
        scene = _scene_with_static_agent((0.0, 5.0))
        traj = [BevPoint(0.0, 5.0)] + [BevPoint(0.0, 5.0 + k) for k in range(1, 6)]
        out = collision_rate([PlanSample(scene, 0, traj)])
        assert out["1s"] == out["2s"] == out["3s"] == 100.0

    def test_late_collision_counts_only_longer_horizons(self):
        scene = _scene_with_static_agent((0.0, 20.0))
        traj = [BevPoint(0, 1), BevPoint(0, 2), BevPoint(0, 3), BevPoint(0, 4), BevPoint(0, 5), BevPoint(0, 20)]
        out = collision_rate([PlanSample(scene, 0, traj)])
        assert out["1s"] == 0.0 and out["2s"] == 0.0 and out["3s"] == 100.0
        assert out["avg"] == pytest.approx(100.0 / 3)

    def test_agent_order_invariance(self):
        scene = _scene_with_static_agent((0.0, 5.0))
        for f in scene.frames:
            f.agents = f.agents + [AgentBox(BevPoint(-20, -20), 4.0, 2.0, 0.5, "car", "a1")]
        traj = [BevPoint(0, k) for k in range(1, 7)]
        base = collision_rate([PlanSample(scene, 0, traj)])
        for f in scene.frames:
            f.agents = list(reversed(f.agents))
        assert collision_rate([PlanSample(scene, 0, traj)]) == base

    def test_rigid_transform_invariance(self):
        scenes = generate_scenes(21, 6)
        samples = [PlanSample(s, 3, ground_truth_plan(s, 3)) for s in scenes]
        base = collision_rate(samples)
        moved = [
            PlanSample(_rigid_transform_scene(s, 0.7, (4.0, -6.0)), 3, ground_truth_plan(s, 3))
            for s in scenes
        ]
        out = collision_rate(moved)
        for key in base:
            assert out[key] == pytest.approx(base[key], abs=1e-9)

    def test_missing_agent_data_names_frame(self):
        scene = _scene_with_static_agent((30.0, 30.0), n=6)
        sample = PlanSample(scene, 2, [BevPoint(0, k) for k in range(1, 7)])
        with pytest.raises(EvaluationError, match="frame 6"):
            collision_rate([sample])

    def test_footprint_validation(self):
        with pytest.raises(ValueError):
            EgoFootprint(length=-1.0)


class TestDetectionF1:
    def test_exact_match(self):
        objs = [("car", (1.0, 2.0)), ("pedestrian", (-3.0, 4.0))]
        for thr in (0.5, 1.0, 2.0, 4.0):
            assert detection_f1(objs, objs, thr) == (1.0, 1.0, 1.0)

    def test_category_must_match(self):
        preds = [("car", (0.0, 0.0))]
        gts = [("pedestrian", (0.0, 0.0))]
        assert detection_f1(preds, gts, 4.0) == (0.0, 0.0, 0.0)

    def test_one_to_one_matching(self):
        preds = [("car", (0.0, 0.0)), ("car", (0.1, 0.0))]
        gts = [("car", (0.0, 0.0))]
        p, r, f = detection_f1(preds, gts, 2.0)
        assert (p, r) == (0.5, 1.0)
        assert f == pytest.approx(2 * 0.5 * 1.0 / 1.5)

    def test_threshold_gates_matches(self):
        preds = [("car", (0.0, 0.0))]
        gts = [("car", (0.0, 3.0))]
        assert detection_f1(preds, gts, 2.0)[2] == 0.0
        assert detection_f1(preds, gts, 4.0)[2] == 1.0

    def test_swap_symmetry(self):
        rng = random.Random(7)
        for _ in range(50):
            preds = [("car", (rng.uniform(-5, 5), rng.uniform(-5, 5))) for _ in range(rng.randrange(6))]
            gts = [("car", (rng.uniform(-5, 5), rng.uniform(-5, 5))) for _ in range(rng.randrange(6))]
            p1, r1, _ = detection_f1(preds, gts, 2.0)
            p2, r2, _ = detection_f1(gts, preds, 2.0)
            assert (p1, r1) == (r2, p2)

    def test_empty_sets(self):
        assert detection_f1([], [], 1.0) == (0.0, 0.0, 0.0)
        assert detection_f1([("car", (0, 0))], [], 1.0) == (0.0, 0.0, 0.0)

    def test_greedy_vs_optimal_assignment(self):
        """Greedy matching stays within the maximal-matching bound of optimal."""
        rng = random.Random(11)
        exact = 0
        trials = 200
        for _ in range(trials):
            n_p, n_g = rng.randrange(1, 8), rng.randrange(1, 8)
            preds = [("car", (rng.uniform(-4, 4), rng.uniform(-4, 4))) for _ in range(n_p)]
            gts = [("car", (rng.uniform(-4, 4), rng.uniform(-4, 4))) for _ in range(n_g)]
            thr = 2.0
            feasible = np.zeros((n_p, n_g))
            for i, (_, pp) in enumerate(preds):
                for j, (_, pg) in enumerate(gts):
                    feasible[i, j] = math.hypot(pp[0] - pg[0], pp[1] - pg[1]) <= thr
            rows, cols = linear_sum_assignment(-feasible)
            tp_opt = int(feasible[rows, cols].sum())
            tp_greedy = detection_f1(preds, gts, thr)[0] * n_p
            assert tp_greedy <= tp_opt + 1e-9
            assert tp_greedy >= tp_opt / 2 - 1e-9
            exact += abs(tp_greedy - tp_opt) < 1e-9
        assert exact / trials > 0.9


class TestFrechet:
    def test_identical(self):
        poly = [(0, 0), (1, 0), (2, 1)]
        assert frechet(poly, poly) == 0.0

    def test_parallel_offset(self):
        a = [(0, 0), (1, 0), (2, 0)]
        b = [(0, 1.5), (1, 1.5), (2, 1.5)]
        assert frechet(a, b) == pytest.approx(1.5)

    def test_symmetry(self):
        rng = random.Random(3)
        for _ in range(20):
            a = [(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(4)]
            b = [(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(6)]
            assert frechet(a, b) == pytest.approx(frechet(b, a))

    def test_lower_bounds_endpoint_distance(self):
        a = [(0, 0), (10, 0)]
        b = [(0, 0), (10, 3)]
        assert frechet(a, b) >= 3.0 - 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            frechet([], [(0, 0)])

    def test_resample_preserves_endpoints(self):
        out = resample_polyline([(0, 0), (1, 0), (4, 0)], n=7)
        assert out[0] == pytest.approx([0, 0])
        assert out[-1] == pytest.approx([4, 0])
        assert len(out) == 7


class TestLaneF1:
    def test_exact_match(self):
        lanes = [[(0, -45), (0, -15), (0, 15), (0, 45)], [(3.5, -45), (3.5, -15), (3.5, 15), (3.5, 45)]]
        assert lane_f1(lanes, lanes) == (1.0, 1.0, 1.0)

    def test_five_meter_offset_scores_zero(self):
        gt = [[(0, -45), (0, -15), (0, 15), (0, 45)]]
        pred = [[(5, -45), (5, -15), (5, 15), (5, 45)]]
        assert lane_f1(pred, gt) == (0.0, 0.0, 0.0)

    def test_mean_over_thresholds(self):
        gt = [[(0, -45), (0, -15), (0, 15), (0, 45)]]
        pred = [[(1.5, -45), (1.5, -15), (1.5, 15), (1.5, 45)]]  # matches at 2 m and 3 m only
        p, r, f = lane_f1(pred, gt)
        assert p == pytest.approx(2 / 3)
        assert f == pytest.approx(2 / 3)


class TestPrCurve:
    def test_single_confident_correct_prediction(self):
        preds = [("car", (0.0, 0.0), 0.9)]
        gts = [("car", (0.0, 0.0))]
        assert pr_curve(preds, gts, 2.0) == [(0.9, 1.0, 1.0)]

    def test_confidence_free_single_point(self):
        preds = [("car", (0.0, 0.0), None), ("car", (9.0, 9.0), None)]
        gts = [("car", (0.0, 0.0))]
        points = pr_curve(preds, gts, 2.0)
        assert len(points) == 1
        cut, p, r = points[0]
        assert cut is None
        assert (p, r) == detection_f1([(c, pt) for c, pt, _ in preds], gts, 2.0)[:2]

    def test_recall_monotone_in_cut(self):
        rng = random.Random(9)
        preds = [("car", (rng.uniform(-5, 5), rng.uniform(-5, 5)), rng.random()) for _ in range(30)]
        gts = [("car", (rng.uniform(-5, 5), rng.uniform(-5, 5))) for _ in range(15)]
        points = pr_curve(preds, gts, 3.0)
        recalls = [r for _, _, r in points]
        assert recalls == sorted(recalls)


class TestEvaluatePredictions:
    def _gt_records(self, scenes, structured=True):
        pairs = build_dataset(scenes, tasks=("planning", "detection", "lane"), seed=0)
        records = []
        for p in pairs:
            rec = {"scene_id": p.meta["scene_id"], "frame": p.meta["frame"], "task": p.task,
                   "chain": p.meta["chain"]}
            if structured and p.task == "planning":
                scene = next(s for s in scenes if s.scene_id == p.meta["scene_id"])
                rec["waypoints"] = [[q.x, q.y] for q in ground_truth_plan(scene, p.meta["frame"])]
            else:
                rec["answer_text"] = p.answer
            records.append(rec)
        return records

    def test_ground_truth_predictions_score_perfectly(self):
        scenes = generate_scenes(123, 5)
        report = evaluate_predictions(self._gt_records(scenes, structured=True), scenes)
        assert report.l2 == {"1s": 0.0, "2s": 0.0, "3s": 0.0, "avg": 0.0}
        for entry in report.f1_tables["detection"].values():
            assert entry["f1"] == 1.0
        assert report.f1_tables["lane"]["mean"]["f1"] == 1.0
        assert report.counts["malformed_answers"] == 0

    def test_text_answers_within_quantization(self):
        scenes = generate_scenes(123, 5)
        report = evaluate_predictions(self._gt_records(scenes, structured=False), scenes)
        assert report.l2["avg"] <= 0.06
        for entry in report.f1_tables["detection"].values():
            assert entry["f1"] == 1.0

    def test_malformed_answers_counted_and_fall_back(self):
        scenes = generate_scenes(7, 2)
        records = [
            {"scene_id": s.scene_id, "frame": 3, "task": "planning", "answer_text": "garbage"}
            for s in scenes
        ]
        report = evaluate_predictions(records, scenes)
        assert report.counts["malformed_answers"] == 2
        assert report.l2["avg"] > 0

    def test_empty_predictions_rejected(self):
        with pytest.raises(EvaluationError):
            evaluate_predictions([], generate_scenes(0, 1))

    def test_unknown_scene_rejected(self):
        with pytest.raises(EvaluationError, match="unknown scene"):
            evaluate_predictions(
                [{"scene_id": "nope", "frame": 3, "task": "planning", "answer_text": ""}],
                generate_scenes(0, 1),
            )

    def test_report_writers(self, tmp_path):
        scenes = generate_scenes(123, 3)
        report = evaluate_predictions(self._gt_records(scenes), scenes, method="oracle")
        json_path = tmp_path / "report.json"
        csv_path = tmp_path / "report.csv"
        report.write_json(str(json_path))
        report.write_csv(str(csv_path))
        loaded = MetricReport.from_obj(json.loads(json_path.read_text()))
        assert loaded.l2 == report.l2
        assert loaded.method == "oracle"
        header, row = csv_path.read_text().strip().splitlines()
        assert header.startswith("method,l2_1s,l2_2s,l2_3s,l2_avg,col_1s")
        assert row.startswith("oracle,0.0000,0.0000,0.0000,0.0000")
