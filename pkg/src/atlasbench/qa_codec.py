"""Text protocol between scenes and the planner: questions, answers, datasets.

Questions come from fixed per-task template pools and may contain `<query>`
slots where continuous 3D tokens get injected. Answers follow a small exact
grammar so that encoding and parsing are inverse bijections on bin indices:

    planning   VEL [bx,by] ACC [bx,by] YAW [b] HIST [b,b]*3 WP [b,b]*6
               (fields present and ordered per the chain configuration)
    detection  CAT <category> [bx,by]   repeated, empty body for no objects
    lane       LANE [b,b] [b,b] [b,b] [b,b]   repeated

Velocity, acceleration and yaw use the kinematic bin spec; history and
waypoints use the spatial one. Parsers are total: any byte string either
parses or raises AnswerParseError carrying the byte offset and the token
the grammar expected there.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .bev_space import (
    KINEMATIC_BINS,
    SPATIAL_BINS,
    BevPoint,
    BinSpec,
    decode_bin,
    encode_bin,
)
from .scene_sim import (
    CATEGORIES,
    HISTORY_STEPS,
    PLAN_STEPS,
    Frame,
    Scene,
    ground_truth_plan,
    heading_forward,
    heading_right,
    world_to_ego,
)

TASKS = ("detection", "lane", "planning", "caption")

COMMAND_TEXT = {
    "go_straight": "go straight",
    "turn_left": "turn left",
    "turn_right": "turn right",
}

_UNIFIED_SLOT_SENTENCE = "They are uniformly represented as queries embeddings<query>."
_PER_VIEW_SLOT_SENTENCE = (
    "They represent left rear image<query>, left front image<query>, direct front image<query>, "
    "right front image<query>, right rear image<query>, and direct rear image<query>."
)

DETECTION_QUESTIONS = (
    "There are six images captured by the surround view cameras in driving vehicle. "
    "They are uniformly represented as queries embeddings<query>. "
    "Define the positive y-axis as the forward direction and the positive x-axis as the right direction. "
    "Please complete the visual detection task under the Bird's Eye View (BEV) perspective. "
    "Ensure that the detection range does not exceed 50 meters.",
    "There are six images captured by the surround view cameras in driving vehicle. "
    "They are uniformly represented as queries embeddings<query>. "
    "Establish the positive y-axis as the frontward direction and the positive x-axis as the rightward direction. "
    "Kindly execute the visual detection task within the Bird's Eye View (BEV) framework. "
    "Be mindful not to exceed a detection range of 50 meters.",
    "There are six images captured by the surround view cameras in driving vehicle. "
    "They are uniformly represented as queries embeddings<query>. "
    "Set the forward direction as the positive y-axis and the right direction as the positive x-axis. "
    "Please carry out the visual detection task within the Bird's Eye View (BEV) context. "
    "Ensure that the detection range remains within 50 meters.",
)

LANE_QUESTIONS = (
    "There are six images captured by the surround view cameras in driving vehicle. "
    "They are uniformly represented as queries embeddings<query>. "
    "Please complete the centerline detection task under the Bird's Eye View (BEV) perspective. "
    "Ensure that the detection range does not exceed 50 meters.",
    "There are six images captured by the surround view cameras in driving vehicle. "
    "They are uniformly represented as queries embeddings<query>. "
    "Be mindful not to exceed a detection range of 50 meters.",
    "There are six images captured by the surround view cameras in driving vehicle. "
    "They are uniformly represented as queries embeddings<query>. "
    "Could you complete the task of detecting the centerline from the Bird's Eye View (BEV) perspective? "
    "Ensure that the detection range remains within 50 meters.",
)

_PLANNING_PREAMBLE = (
    "The six images include objects that are uniformly represented as 3D detection query "
    "embeddings<query> and map query embeddings<query>. "
    "Define the positive y-axis as the forward direction and the positive x-axis as the right direction. "
    "The speed of the vehicle is defined as [velocity along the x-axis, velocity along the y-axis]. "
    "The acceleration of the vehicle is defined as [acceleration along the x-axis, acceleration along the y-axis]. "
    "The ego car will {command} in future. "
)

_PLANNING_REQUESTS = (
    "Kindly furnish suitable waypoints for the vehicle's trajectory based on the provided particulars. "
    "Waypoints ought to adhere to the [x, y] format, with each waypoint spaced at 0.5-second intervals "
    "within a continuous 3.0-second timeframe. "
    "For planning tasks, please pay attention to driving safety and avoid vehicle collisions during driving "
    "in continous time.",
    "We request your provision of pertinent waypoints for the vehicle's route in accordance with the given "
    "information. Waypoints should conform to the format [x, y], with spacing set at 0.5-second intervals "
    "over a continuous duration of 3.0 seconds. "
    "For planning tasks, please pay attention to driving safety and avoid vehicle collisions during driving "
    "in continous time.",
    "Please submit fitting waypoints for the vehicle's course based on the supplied data. "
    "Ensure waypoints are structured as [x, y] and spaced at intervals of 0.5 seconds across a continuous "
    "3.0-second period. "
    "For planning tasks, please pay attention to driving safety and avoid vehicle collisions during driving "
    "in continous time.",
)

CAPTION_QUESTIONS = (
    "Describe the current traffic conditions. If there are traffic lights in the image, describe the status "
    "of all the traffic lights, including any countdowns; if there are none, please do not respond. "
    "If there are traffic signs in the picture, identify and explain each one; if there are none, no "
    "explanation is necessary. If there are other vehicles in the picture, describe them in more detail. "
    "Please ensure the answer does not exceed 600 words. Answers must be in English.",
)

CHAIN_ELEMENTS = ("V", "A", "Y", "T", "P")
CHAIN_MARKERS = {"V": "VEL", "A": "ACC", "Y": "YAW", "T": "HIST", "P": "WP"}
# The six chain configurations the answer grammar must support.
CHAIN_CONFIGS = ("P", "V-P", "V-A-P", "V-A-Y-P", "V-A-T-P", "P-V-A")


@dataclass(frozen=True)
class ChainSpec:
    """Ordered selection of answer fields; planning (P) is always present."""

    elements: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.elements:
            raise ValueError("chain must not be empty")
        for e in self.elements:
            if e not in CHAIN_ELEMENTS:
                raise ValueError(f"unknown chain element {e!r}")
        if len(set(self.elements)) != len(self.elements):
            raise ValueError(f"duplicate chain elements in {self.elements}")
        if "P" not in self.elements:
            raise ValueError("chain must contain P")

    @classmethod
    def from_string(cls, s: str) -> "ChainSpec":
        return cls(tuple(part.strip() for part in s.split("-") if part.strip()))

    def __str__(self) -> str:
        return "-".join(self.elements)


DEFAULT_CHAIN = ChainSpec.from_string("V-A-P")


class AnswerParseError(ValueError):
    """Grammar violation at a known byte offset."""

    def __init__(self, offset: int, expected: str, found: str):
        super().__init__(f"at byte {offset}: expected {expected}, found {found!r}")
        self.offset = offset
        self.expected = expected
        self.found = found


@dataclass
class PlanningAnswer:
    waypoint_bins: list[tuple[int, int]]
    waypoints: list[BevPoint]
    velocity_bins: tuple[int, int] | None = None
    velocity: tuple[float, float] | None = None
    acceleration_bins: tuple[int, int] | None = None
    acceleration: tuple[float, float] | None = None
    yaw_bin: int | None = None
    yaw: float | None = None
    history_bins: list[tuple[int, int]] | None = None
    history: list[BevPoint] | None = None


@dataclass
class DetectionAnswer:
    items: list[tuple[str, tuple[int, int]]]

    @property
    def points(self) -> list[tuple[str, BevPoint]]:
        return [
            (cat, BevPoint(decode_bin(bx), decode_bin(by))) for cat, (bx, by) in self.items
        ]


@dataclass
class LaneAnswer:
    polylines_bins: list[list[tuple[int, int]]]

    @property
    def polylines(self) -> list[list[BevPoint]]:
        return [
            [BevPoint(decode_bin(bx), decode_bin(by)) for bx, by in line]
            for line in self.polylines_bins
        ]


@dataclass
class QaPair:
    task: str
    question: str
    answer: str
    structured_answer: Any = None
    meta: dict = field(default_factory=dict)


def build_question(
    task: str, template_seed: int, command: str = "go_straight", per_view: bool = False
) -> str:
    """Pick a question template deterministically from the task's pool.

    Planning questions substitute the high-level command sentence; detection
    and lane questions can switch from the unified single `<query>` slot to
    the six per-view slots.
    """
    if task == "detection":
        pool = DETECTION_QUESTIONS
    elif task == "lane":
        pool = LANE_QUESTIONS
    elif task == "planning":
        pool = _PLANNING_REQUESTS
    elif task == "caption":
        pool = CAPTION_QUESTIONS
    else:
        raise ValueError(f"unknown task {task!r}")
    idx = template_seed % len(pool)
    if task == "planning":
        if command not in COMMAND_TEXT:
            raise ValueError(f"unknown command {command!r}")
        return _PLANNING_PREAMBLE.format(command=COMMAND_TEXT[command]) + pool[idx]
    text = pool[idx]
    if per_view and task in ("detection", "lane"):
        text = text.replace(_UNIFIED_SLOT_SENTENCE, _PER_VIEW_SLOT_SENTENCE)
    return text


def count_slots(question: str) -> int:
    return question.count("<query>")


# ---------------------------------------------------------------------------
# Answer encoding
# ---------------------------------------------------------------------------

def _pair_text(x: float, y: float, spec: BinSpec) -> str:
    return f"[{encode_bin(x, spec)},{encode_bin(y, spec)}]"


def encode_planning_answer(
    plan: Sequence[Sequence[float]],
    chain: ChainSpec = DEFAULT_CHAIN,
    velocity: Sequence[float] | None = None,
    acceleration: Sequence[float] | None = None,
    yaw: float | None = None,
    history: Sequence[Sequence[float]] | None = None,
) -> str:
    """Render a planning answer with fields in chain order.

    Out-of-range values clamp into the terminal bins (the bin codec never
    raises on finite input); missing values for a requested chain field are
    a caller bug and raise ValueError.
    """
    if len(plan) != PLAN_STEPS:
        raise ValueError(f"plan must have {PLAN_STEPS} waypoints, got {len(plan)}")
    parts: list[str] = []
    for element in chain.elements:
        if element == "V":
            if velocity is None:
                raise ValueError("chain requests V but velocity is missing")
            parts.append("VEL " + _pair_text(velocity[0], velocity[1], KINEMATIC_BINS))
        elif element == "A":
            if acceleration is None:
                raise ValueError("chain requests A but acceleration is missing")
            parts.append("ACC " + _pair_text(acceleration[0], acceleration[1], KINEMATIC_BINS))
        elif element == "Y":
            if yaw is None:
                raise ValueError("chain requests Y but yaw is missing")
            parts.append(f"YAW [{encode_bin(yaw, KINEMATIC_BINS)}]")
        elif element == "T":
            if history is None or len(history) != HISTORY_STEPS:
                raise ValueError(f"chain requests T but history is not {HISTORY_STEPS} points")
            parts.append(
                "HIST " + " ".join(_pair_text(p[0], p[1], SPATIAL_BINS) for p in history)
            )
        else:  # P
            parts.append("WP " + " ".join(_pair_text(p[0], p[1], SPATIAL_BINS) for p in plan))
    return " ".join(parts)


def encode_detection_answer(objects: Sequence[tuple[str, Sequence[float]]]) -> str:
    """`CAT <name> [bx,by]` per object; empty list encodes to an empty body."""
    parts = []
    for category, center in objects:
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}; known: {', '.join(CATEGORIES)}")
        parts.append(f"CAT {category} " + _pair_text(center[0], center[1], SPATIAL_BINS))
    return " ".join(parts)


def encode_lane_answer(polylines: Sequence[Sequence[Sequence[float]]]) -> str:
    """`LANE [b,b] [b,b] [b,b] [b,b]` per centerline."""
    parts = []
    for line in polylines:
        if len(line) != 4:
            raise ValueError(f"lane centerline needs exactly 4 points, got {len(line)}")
        parts.append("LANE " + " ".join(_pair_text(p[0], p[1], SPATIAL_BINS) for p in line))
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Answer parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"\s*(?:(?P<word>[A-Za-z_]+)|(?P<int>\d+)|(?P<punct>[\[\],]))")


class _Cursor:
    """Token cursor over an answer string, tracking byte offsets."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> tuple[str, str, int]:
        """Return (kind, value, offset) without consuming; kind 'end' at EOF."""
        self._skip_ws()
        if self.pos >= len(self.text):
            return ("end", "", self.pos)
        m = _TOKEN_RE.match(self.text, self.pos)
        if m is None or m.end() == self.pos:
            return ("bad", self.text[self.pos], self.pos)
        if m.group("word") is not None:
            return ("word", m.group("word"), m.start("word"))
        if m.group("int") is not None:
            return ("int", m.group("int"), m.start("int"))
        return ("punct", m.group("punct"), m.start("punct"))

    def next(self) -> tuple[str, str, int]:
        kind, value, offset = self.peek()
        if kind not in ("end", "bad"):
            self.pos = offset + len(value)
        elif kind == "bad":
            self.pos = offset + 1
        return (kind, value, offset)

    def expect_word(self, word: str) -> None:
        kind, value, offset = self.next()
        if kind != "word" or value != word:
            raise AnswerParseError(offset, word, value if value else "end of input")

    def expect_punct(self, punct: str) -> None:
        kind, value, offset = self.next()
        if value != punct:
            raise AnswerParseError(offset, f"'{punct}'", value if value else "end of input")

    def expect_bin(self, spec: BinSpec) -> int:
        kind, value, offset = self.next()
        if kind != "int":
            raise AnswerParseError(offset, "bin index", value if value else "end of input")
        b = int(value)
        if not (0 <= b < spec.n):
            raise AnswerParseError(offset, f"bin index in [0, {spec.n - 1}]", value)
        return b

    def expect_end(self) -> None:
        kind, value, offset = self.peek()
        if kind != "end":
            raise AnswerParseError(offset, "end of input", value)

    def at_end(self) -> bool:
        return self.peek()[0] == "end"


def _parse_pair(cur: _Cursor, spec: BinSpec) -> tuple[int, int]:
    cur.expect_punct("[")
    bx = cur.expect_bin(spec)
    cur.expect_punct(",")
    by = cur.expect_bin(spec)
    cur.expect_punct("]")
    return bx, by


def _decode_pair(pair: tuple[int, int], spec: BinSpec) -> tuple[float, float]:
    return decode_bin(pair[0], spec), decode_bin(pair[1], spec)


def parse_planning_answer(text: str, chain: ChainSpec = DEFAULT_CHAIN) -> PlanningAnswer:
    """Strict parse of a planning answer against the chain's field order."""
    cur = _Cursor(text)
    out = PlanningAnswer(waypoint_bins=[], waypoints=[])
    for element in chain.elements:
        cur.expect_word(CHAIN_MARKERS[element])
        if element == "V":
            out.velocity_bins = _parse_pair(cur, KINEMATIC_BINS)
            out.velocity = _decode_pair(out.velocity_bins, KINEMATIC_BINS)
        elif element == "A":
            out.acceleration_bins = _parse_pair(cur, KINEMATIC_BINS)
            out.acceleration = _decode_pair(out.acceleration_bins, KINEMATIC_BINS)
        elif element == "Y":
            cur.expect_punct("[")
            out.yaw_bin = cur.expect_bin(KINEMATIC_BINS)
            cur.expect_punct("]")
            out.yaw = decode_bin(out.yaw_bin, KINEMATIC_BINS)
        elif element == "T":
            out.history_bins = [_parse_pair(cur, SPATIAL_BINS) for _ in range(HISTORY_STEPS)]
            out.history = [BevPoint(*_decode_pair(p, SPATIAL_BINS)) for p in out.history_bins]
        else:  # P
            for k in range(PLAN_STEPS):
                kind, value, offset = cur.peek()
                if value != "[":
                    raise AnswerParseError(
                        offset, f"{PLAN_STEPS} waypoints", value if value else "end of input"
                    )
                out.waypoint_bins.append(_parse_pair(cur, SPATIAL_BINS))
            out.waypoints = [BevPoint(*_decode_pair(p, SPATIAL_BINS)) for p in out.waypoint_bins]
    cur.expect_end()
    return out


def parse_detection_answer(text: str) -> DetectionAnswer:
    cur = _Cursor(text)
    items: list[tuple[str, tuple[int, int]]] = []
    while not cur.at_end():
        cur.expect_word("CAT")
        kind, value, offset = cur.next()
        if kind != "word" or value not in CATEGORIES:
            raise AnswerParseError(
                offset, f"category name (one of {', '.join(CATEGORIES)})", value or "end of input"
            )
        items.append((value, _parse_pair(cur, SPATIAL_BINS)))
    return DetectionAnswer(items=items)


def parse_lane_answer(text: str) -> LaneAnswer:
    cur = _Cursor(text)
    polylines: list[list[tuple[int, int]]] = []
    while not cur.at_end():
        cur.expect_word("LANE")
        line = []
        for _ in range(4):
            kind, value, offset = cur.peek()
            if value != "[":
                raise AnswerParseError(offset, "4 lane points", value if value else "end of input")
            line.append(_parse_pair(cur, SPATIAL_BINS))
        polylines.append(line)
    return LaneAnswer(polylines_bins=polylines)


# ---------------------------------------------------------------------------
# Frame-level fact extraction and dataset building
# ---------------------------------------------------------------------------

def rotate_to_ego(vec: Sequence[float], yaw: float) -> tuple[float, float]:
    """Rotate a world-frame vector into the ego frame (no translation)."""
    rx, ry = heading_right(yaw)
    fx, fy = heading_forward(yaw)
    return (rx * vec[0] + ry * vec[1], fx * vec[0] + fy * vec[1])


def planning_facts(scene: Scene, t0: int) -> dict:
    """Ego-frame quantities the planning answer encodes at frame t0."""
    frame = scene.frames[t0]
    pos, yaw = frame.ego.position, frame.ego.yaw
    return {
        "velocity": rotate_to_ego(frame.ego.velocity, yaw),
        "acceleration": rotate_to_ego(frame.ego.acceleration, yaw),
        "yaw": yaw,
        "history": [world_to_ego(p, pos, yaw) for p in frame.ego.history],
        "plan": ground_truth_plan(scene, t0),
    }


DETECTION_RANGE = 50.0


def in_range(p: BevPoint, limit: float = DETECTION_RANGE) -> bool:
    return abs(p.x) < limit and abs(p.y) < limit


def detection_facts(frame: Frame) -> list[tuple[str, BevPoint]]:
    """Ego-frame agent centers; the protocol caps the detection range at 50 m."""
    pos, yaw = frame.ego.position, frame.ego.yaw
    out = [(a.category, world_to_ego(a.center, pos, yaw)) for a in frame.agents]
    return [(cat, p) for cat, p in out if in_range(p)]


def lane_facts(frame: Frame) -> list[list[BevPoint]]:
    """Ego-frame centerlines, dropping lanes that leave the 50 m range."""
    pos, yaw = frame.ego.position, frame.ego.yaw
    lines = [[world_to_ego(p, pos, yaw) for p in lane.points] for lane in frame.lanes]
    return [line for line in lines if all(in_range(p) for p in line)]


def caption_text(frame: Frame) -> str:
    vehicles = sum(1 for a in frame.agents if a.category not in ("pedestrian", "traffic_cone", "barrier"))
    pedestrians = sum(1 for a in frame.agents if a.category == "pedestrian")
    return (
        f"The scene contains {vehicles} vehicles and {pedestrians} pedestrians around the ego car. "
        f"The ego car will {COMMAND_TEXT[frame.command]}."
    )


def usable_frames(scene: Scene) -> range:
    """Frames with a full history behind them and a full plan ahead of them."""
    return range(HISTORY_STEPS, len(scene.frames) - PLAN_STEPS)


def _template_seed(seed: int, scene_id: str, frame: int, task: str) -> int:
    return zlib.crc32(f"{seed}|{scene_id}|{frame}|{task}".encode()) & 0x7FFFFFFF


def build_pair(scene: Scene, t0: int, task: str, seed: int, chain: ChainSpec) -> QaPair:
    frame = scene.frames[t0]
    tseed = _template_seed(seed, scene.scene_id, t0, task)
    meta = {"scene_id": scene.scene_id, "frame": t0, "chain": str(chain) if task == "planning" else None}
    if task == "planning":
        facts = planning_facts(scene, t0)
        question = build_question(task, tseed, command=frame.command)
        answer = encode_planning_answer(
            facts["plan"],
            chain,
            velocity=facts["velocity"],
            acceleration=facts["acceleration"],
            yaw=facts["yaw"],
            history=facts["history"],
        )
        structured: Any = parse_planning_answer(answer, chain)
    elif task == "detection":
        objects = detection_facts(frame)
        question = build_question(task, tseed)
        answer = encode_detection_answer(objects)
        structured = parse_detection_answer(answer)
    elif task == "lane":
        lines = lane_facts(frame)
        question = build_question(task, tseed)
        answer = encode_lane_answer(lines)
        structured = parse_lane_answer(answer)
    elif task == "caption":
        question = build_question(task, tseed)
        answer = caption_text(frame)
        structured = None
    else:
        raise ValueError(f"unknown task {task!r}")
    return QaPair(task=task, question=question, answer=answer, structured_answer=structured, meta=meta)


def build_dataset(
    scenes: Iterable[Scene],
    tasks: Sequence[str] = ("planning",),
    chain: ChainSpec = DEFAULT_CHAIN,
    seed: int = 0,
) -> list[QaPair]:
    """One QA pair per (scene, usable frame, task), ordered by (scene id, frame, task)."""
    for task in tasks:
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
    pairs = []
    for scene in sorted(scenes, key=lambda s: s.scene_id):
        for t0 in usable_frames(scene):
            for task in sorted(tasks):
                pairs.append(build_pair(scene, t0, task, seed, chain))
    return pairs


def write_qa_jsonl(pairs: Iterable[QaPair], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {"task": p.task, "question": p.question, "answer": p.answer, "meta": p.meta},
                    separators=(",", ":"),
                )
                + "\n"
            )


def read_qa_jsonl(path: str) -> list[QaPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
                pairs.append(
                    QaPair(task=obj["task"], question=obj["question"], answer=obj["answer"], meta=obj["meta"])
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"line {lineno}: bad QA record: {exc}") from exc
    return pairs
