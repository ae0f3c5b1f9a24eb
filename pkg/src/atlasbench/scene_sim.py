"""Deterministic synthetic driving scenes: ego states, agent boxes, lanes.

Scenes are rolled out at a fixed 2 Hz (0.5 s per frame) in a world frame
that shares the BEV convention (x right, y forward). A body's yaw is the
angle of its forward axis measured counterclockwise from +y, so

    forward(yaw) = (-sin yaw, cos yaw)      right(yaw) = (cos yaw, sin yaw)

and a left turn means yaw increases. Everything an ego or agent does here
is a constant-speed arc (straight line when the turn rate is zero), which
is enough to exercise planning, detection and collision metrics while
keeping every quantity exactly reproducible from (seed, config).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bev_space import BevPoint

FRAME_DT = 0.5
PLAN_STEPS = 6
HISTORY_STEPS = 3
MIN_FRAMES = HISTORY_STEPS + 1 + PLAN_STEPS
WORLD_LIMIT = 50.0

COMMANDS = ("go_straight", "turn_left", "turn_right")

# (length, width) per category; the first six are the movable ones the
# simulator spawns, the rest complete the fixed 10-name vocabulary that the
# QA protocol recognizes.
CATEGORY_DIMS: dict[str, tuple[float, float]] = {
    "car": (4.5, 1.9),
    "truck": (7.0, 2.5),
    "bus": (11.0, 2.9),
    "pedestrian": (0.7, 0.7),
    "motorcycle": (2.1, 0.8),
    "bicycle": (1.7, 0.6),
    "trailer": (10.0, 2.7),
    "construction_vehicle": (6.0, 2.6),
    "traffic_cone": (0.4, 0.4),
    "barrier": (2.0, 0.4),
}
CATEGORIES = tuple(CATEGORY_DIMS)
_SPAWNABLE = ("car", "car", "car", "truck", "pedestrian", "pedestrian", "motorcycle", "bicycle")


class SceneConfigError(ValueError):
    """Raised for configurations that cannot produce a valid scene."""


class SceneFileError(ValueError):
    """Raised for malformed scene files; carries the offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def heading_forward(yaw: float) -> tuple[float, float]:
    return (-math.sin(yaw), math.cos(yaw))


def heading_right(yaw: float) -> tuple[float, float]:
    return (math.cos(yaw), math.sin(yaw))


def world_to_ego(p: Sequence[float], origin: Sequence[float], yaw: float) -> BevPoint:
    """Express a world point in the frame of a pose (y along its forward axis)."""
    dx = p[0] - origin[0]
    dy = p[1] - origin[1]
    rx, ry = heading_right(yaw)
    fx, fy = heading_forward(yaw)
    return BevPoint(rx * dx + ry * dy, fx * dx + fy * dy)


def ego_to_world(p: Sequence[float], origin: Sequence[float], yaw: float) -> BevPoint:
    dx, dy = p[0], p[1]
    rx, ry = heading_right(yaw)
    fx, fy = heading_forward(yaw)
    return BevPoint(origin[0] + rx * dx + fx * dy, origin[1] + ry * dx + fy * dy)


def advance_pose(
    x: float, y: float, yaw: float, speed: float, omega: float, dt: float
) -> tuple[float, float, float]:
    """Advance a constant-speed, constant-turn-rate pose by dt seconds.

    Closed-form arc integration; falls back to the straight-line limit for
    near-zero turn rates so tiny omegas do not blow up numerically.
    """
    if abs(omega) < 1e-9:
        fx, fy = heading_forward(yaw)
        return x + speed * dt * fx, y + speed * dt * fy, yaw
    yaw1 = yaw + omega * dt
    r = speed / omega
    return (
        x + r * (math.cos(yaw1) - math.cos(yaw)),
        y + r * (math.sin(yaw1) - math.sin(yaw)),
        yaw1,
    )


def rollout(
    x0: float, y0: float, yaw0: float, speed: float, omega: float, n_steps: int, dt: float = FRAME_DT
) -> list[tuple[float, float, float]]:
    """Poses at t = 0, dt, ..., (n_steps-1)*dt for one arc motion."""
    poses = [(x0, y0, yaw0)]
    for _ in range(n_steps - 1):
        poses.append(advance_pose(*poses[-1], speed, omega, dt))
    return poses


@dataclass
class EgoState:
    position: BevPoint
    velocity: tuple[float, float]
    acceleration: tuple[float, float]
    yaw: float
    history: list[BevPoint] = field(default_factory=list)


@dataclass
class AgentBox:
    center: BevPoint
    length: float
    width: float
    heading: float
    category: str
    id: str


@dataclass
class LaneCenterline:
    points: list[BevPoint]

    def __post_init__(self) -> None:
        if len(self.points) != 4:
            raise ValueError(f"lane centerline needs exactly 4 points, got {len(self.points)}")


@dataclass
class Frame:
    t: float
    ego: EgoState
    agents: list[AgentBox]
    lanes: list[LaneCenterline]
    command: str


@dataclass
class Scene:
    scene_id: str
    frames: list[Frame]


@dataclass
class SceneConfig:
    n_frames: int = MIN_FRAMES
    n_agents: tuple[int, int] = (2, 6)
    ego_speed: tuple[float, float] = (2.0, 12.0)
    ego_turn_rate: tuple[float, float] = (0.08, 0.22)
    agent_speed_sigma: float = 1.0
    agent_turn_prob: float = 0.25
    agent_turn_rate: float = 0.12
    lane_offsets: tuple[float, ...] = (-3.5, 0.0, 3.5)
    command: str | None = None

    def validate(self) -> None:
        if self.n_frames < MIN_FRAMES:
            raise SceneConfigError(f"n_frames must be >= {MIN_FRAMES}, got {self.n_frames}")
        lo, hi = self.n_agents
        if lo < 0 or hi < lo:
            raise SceneConfigError(f"invalid agent count range {self.n_agents}")
        if self.ego_speed[0] < 0 or self.ego_speed[1] < self.ego_speed[0]:
            raise SceneConfigError(f"invalid ego speed range {self.ego_speed}")
        if self.ego_turn_rate[0] <= 0 or self.ego_turn_rate[1] < self.ego_turn_rate[0]:
            raise SceneConfigError(f"invalid turn rate range {self.ego_turn_rate}")
        if self.agent_speed_sigma < 0:
            raise SceneConfigError("agent_speed_sigma must be non-negative")
        if self.command is not None and self.command not in COMMANDS:
            raise SceneConfigError(f"unknown command {self.command!r}")


def _recenter(poses: list[tuple[float, float, float]], margin: float, rng: np.random.Generator,
              jitter: float) -> list[tuple[float, float, float]]:
    """Translate a trajectory so it (plus margin) fits inside the world box.

    The trajectory is shifted so its bounding box sits at a jittered center;
    the jitter range shrinks as the trajectory grows, which guarantees every
    pose stays within +-(WORLD_LIMIT - margin) regardless of speed draw.
    """
    xs = [p[0] for p in poses]
    ys = [p[1] for p in poses]
    cx = 0.5 * (min(xs) + max(xs))
    cy = 0.5 * (min(ys) + max(ys))
    half_x = 0.5 * (max(xs) - min(xs))
    half_y = 0.5 * (max(ys) - min(ys))
    room_x = max(0.0, WORLD_LIMIT - margin - half_x)
    room_y = max(0.0, WORLD_LIMIT - margin - half_y)
    tx = rng.uniform(-1.0, 1.0) * min(jitter, room_x)
    ty = rng.uniform(-1.0, 1.0) * min(jitter, room_y)
    return [(x - cx + tx, y - cy + ty, yaw) for x, y, yaw in poses]


def generate_scene(seed: int, config: SceneConfig | None = None, scene_id: str | None = None) -> Scene:
    """Generate one deterministic scene from (seed, config).

    The ego follows a command-consistent arc (left turns increase yaw) and
    agents drift with traffic: their speeds are drawn around the ego's, so
    scene context genuinely carries information about ego motion.
    """
    config = config or SceneConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    n = config.n_frames

    command = config.command or COMMANDS[rng.integers(0, len(COMMANDS))]
    ego_speed = float(rng.uniform(*config.ego_speed))
    if command == "go_straight":
        ego_omega = 0.0
    else:
        mag = float(rng.uniform(*config.ego_turn_rate))
        ego_omega = mag if command == "turn_left" else -mag
    ego_poses = rollout(0.0, 0.0, 0.0, ego_speed, ego_omega, n)
    ego_poses = _recenter(ego_poses, margin=5.0, rng=rng, jitter=3.0)

    # Ego circumradius (4.084 x 1.85 footprint) for ground-truth clearance.
    ego_radius = 0.5 * math.hypot(4.084, 1.85)

    n_agents = int(rng.integers(config.n_agents[0], config.n_agents[1] + 1))
    agent_tracks: list[tuple[str, float, float, list[tuple[float, float, float]]]] = []
    for i in range(n_agents):
        category = _SPAWNABLE[rng.integers(0, len(_SPAWNABLE))]
        length, width = CATEGORY_DIMS[category]
        speed = float(np.clip(rng.normal(ego_speed, config.agent_speed_sigma), 0.0, 12.0))
        if category in ("pedestrian", "bicycle"):
            speed = min(speed, 2.0)
        omega = 0.0
        if rng.uniform() < config.agent_turn_prob:
            omega = float(rng.uniform(-config.agent_turn_rate, config.agent_turn_rate))
        yaw0 = float(rng.uniform(-math.pi, math.pi))
        poses = rollout(0.0, 0.0, yaw0, speed, omega, n)
        # Place the track so it stays in bounds and clear of the ego's own
        # path at every frame: the ground truth must be collision-free, as
        # logged human driving is. Deterministically keep the best of a fixed
        # number of candidate shifts.
        clearance = ego_radius + 0.5 * math.hypot(length, width) + 1.0
        xs = [p[0] for p in poses]
        ys = [p[1] for p in poses]
        cx0, cy0 = 0.5 * (min(xs) + max(xs)), 0.5 * (min(ys) + max(ys))
        room_x = max(0.0, WORLD_LIMIT - 6.0 - 0.5 * (max(xs) - min(xs)))
        room_y = max(0.0, WORLD_LIMIT - 6.0 - 0.5 * (max(ys) - min(ys)))
        best = None
        for _ in range(40):
            tx = rng.uniform(-room_x, room_x)
            ty = rng.uniform(-room_y, room_y)
            min_dist = min(
                math.hypot(x - cx0 + tx - ex, y - cy0 + ty - ey)
                for (x, y, _), (ex, ey, _) in zip(poses, ego_poses)
            )
            if best is None or min_dist > best[0]:
                best = (min_dist, tx, ty)
            if min_dist >= clearance:
                break
        _, tx, ty = best
        poses = [(x - cx0 + tx, y - cy0 + ty, yaw) for x, y, yaw in poses]
        agent_tracks.append((category, length, width, poses))

    lanes = [
        LaneCenterline([BevPoint(off, -45.0), BevPoint(off, -15.0), BevPoint(off, 15.0), BevPoint(off, 45.0)])
        for off in config.lane_offsets
    ]

    frames: list[Frame] = []
    for k in range(n):
        x, y, yaw = ego_poses[k]
        fx, fy = heading_forward(yaw)
        if abs(ego_omega) < 1e-9:
            acc = (0.0, 0.0)
        else:
            acc = (-ego_speed * ego_omega * math.cos(yaw), -ego_speed * ego_omega * math.sin(yaw))
        history = [BevPoint(*ego_poses[j][:2]) for j in range(max(0, k - HISTORY_STEPS), k)]
        ego = EgoState(
            position=BevPoint(x, y),
            velocity=(ego_speed * fx, ego_speed * fy),
            acceleration=acc,
            yaw=wrap_angle(yaw),
            history=history,
        )
        agents = [
            AgentBox(
                center=BevPoint(poses[k][0], poses[k][1]),
                length=length,
                width=width,
                heading=wrap_angle(poses[k][2]),
                category=category,
                id=f"a{idx}",
            )
            for idx, (category, length, width, poses) in enumerate(agent_tracks)
        ]
        frames.append(Frame(t=k * FRAME_DT, ego=ego, agents=agents, lanes=list(lanes), command=command))

    return Scene(scene_id=scene_id or f"scene-{seed:08d}", frames=frames)


def generate_scenes(seed: int, count: int, config: SceneConfig | None = None) -> list[Scene]:
    """Generate `count` scenes with per-scene seeds derived from `seed`."""
    return [generate_scene(seed * 1_000_003 + i, config, scene_id=f"scene-{seed:06d}-{i:05d}") for i in range(count)]


def ground_truth_plan(scene: Scene, t0: int) -> list[BevPoint]:
    """Future ego positions at t0+0.5s .. t0+3.0s, in the ego frame at t0."""
    if t0 < 0 or t0 + PLAN_STEPS > len(scene.frames) - 1:
        raise IndexError(
            f"frame {t0} needs {PLAN_STEPS} future frames, scene has {len(scene.frames)}"
        )
    origin = scene.frames[t0].ego.position
    yaw = scene.frames[t0].ego.yaw
    return [
        world_to_ego(scene.frames[t0 + k].ego.position, origin, yaw)
        for k in range(1, PLAN_STEPS + 1)
    ]


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------

def _point(p: Sequence[float]) -> list[float]:
    return [float(p[0]), float(p[1])]


def _scene_to_obj(scene: Scene) -> dict:
    return {
        "id": scene.scene_id,
        "frames": [
            {
                "t": f.t,
                "ego": {
                    "pos": _point(f.ego.position),
                    "vel": [f.ego.velocity[0], f.ego.velocity[1]],
                    "acc": [f.ego.acceleration[0], f.ego.acceleration[1]],
                    "yaw": f.ego.yaw,
                    "history": [_point(p) for p in f.ego.history],
                },
                "agents": [
                    {
                        "center": _point(a.center),
                        "len": a.length,
                        "wid": a.width,
                        "heading": a.heading,
                        "cat": a.category,
                        "id": a.id,
                    }
                    for a in f.agents
                ],
                "lanes": [[_point(p) for p in lane.points] for lane in f.lanes],
                "command": f.command,
            }
            for f in scene.frames
        ],
    }


def _scene_from_obj(obj: dict, line: int) -> Scene:
    try:
        frames = []
        for f in obj["frames"]:
            ego = f["ego"]
            frames.append(
                Frame(
                    t=float(f["t"]),
                    ego=EgoState(
                        position=BevPoint(*ego["pos"]),
                        velocity=(float(ego["vel"][0]), float(ego["vel"][1])),
                        acceleration=(float(ego["acc"][0]), float(ego["acc"][1])),
                        yaw=float(ego["yaw"]),
                        history=[BevPoint(*p) for p in ego["history"]],
                    ),
                    agents=[
                        AgentBox(
                            center=BevPoint(*a["center"]),
                            length=float(a["len"]),
                            width=float(a["wid"]),
                            heading=float(a["heading"]),
                            category=a["cat"],
                            id=a["id"],
                        )
                        for a in f["agents"]
                    ],
                    lanes=[LaneCenterline([BevPoint(*p) for p in lane]) for lane in f["lanes"]],
                    command=f["command"],
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFileError(line, f"bad scene record: {exc}") from exc
    if not frames:
        raise SceneFileError(line, "scene has no frames")
    for i in range(1, len(frames)):
        if not math.isclose(frames[i].t - frames[i - 1].t, FRAME_DT, abs_tol=1e-9):
            raise SceneFileError(line, f"frame timestamps must advance by {FRAME_DT} s")
    return Scene(scene_id=str(obj.get("id", f"scene-line{line}")), frames=frames)


def export_scenes(scenes: Iterable[Scene], path: str) -> None:
    """Write one scene per line as JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(_scene_to_obj(scene), separators=(",", ":")) + "\n")


def import_scenes(path: str) -> list[Scene]:
    """Read scenes back; raises SceneFileError naming the offending line."""
    scenes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SceneFileError(lineno, f"invalid JSON: {exc.msg}") from exc
            scenes.append(_scene_from_obj(obj, lineno))
    return scenes
