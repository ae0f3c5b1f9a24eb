"""Object-query tokens: content embeddings tied to 3D reference points.

A query token pairs a content vector with a reference point (x, y, z; z is 0
in this planar world) and, for detection-style queries, a confidence. The
reference point enters the content additively through a linear map whose
weights start at exactly zero, so a freshly built embedder is a no-op on the
content; location information only flows in once training moves the weights.

A small FIFO queue keeps the top-K highest-confidence queries from the most
recent frames; its concatenation with the current frame's queries is what the
planner sees. A single affine projector lifts query space into the planner's
embedding space.

Queries here are synthesized from ground-truth scenes: a fixed random
featurizer turns (noisy) agent and lane geometry into content vectors, which
stands in for a perception network while keeping everything deterministic.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .scene_sim import Scene, heading_forward, heading_right, world_to_ego
from .scene_sim import CATEGORIES

RP_STRATEGIES = ("none", "sincos", "learned", "rp")

MEMORY_DEPTH = 3
MEMORY_TOP_K = 256


@dataclass
class QueryToken:
    embedding: np.ndarray
    reference_point: tuple[float, float, float]
    confidence: float | None = None


@dataclass
class RefPointProjector:
    """Affine map from reference points into query space; zero at construction."""

    weight: np.ndarray  # (d_q, 3)
    bias: np.ndarray  # (d_q,)

    @classmethod
    def zeros(cls, d_q: int) -> "RefPointProjector":
        return cls(weight=np.zeros((d_q, 3)), bias=np.zeros(d_q))


@dataclass
class Projector:
    """Single affine map from query space into the planner's embedding space."""

    weight: np.ndarray  # (d_llm, d_q)
    bias: np.ndarray  # (d_llm,)


def stack_embeddings(queries: Sequence[QueryToken], d_q: int | None = None) -> np.ndarray:
    if not queries:
        if d_q is None:
            raise ValueError("cannot stack an empty query list without knowing d_q")
        return np.zeros((0, d_q))
    mat = np.stack([q.embedding for q in queries])
    if mat.ndim != 2:
        raise ValueError("query embeddings must be 1-D vectors of uniform dimension")
    return mat


def stack_reference_points(queries: Sequence[QueryToken]) -> np.ndarray:
    if not queries:
        return np.zeros((0, 3))
    return np.array([q.reference_point for q in queries], dtype=float)


def embed_tokens(queries: Sequence[QueryToken], rp: RefPointProjector) -> np.ndarray:
    """Content plus reference-point embedding, rowwise: E + R @ W.T + b."""
    d_q = rp.weight.shape[0]
    emb = stack_embeddings(queries, d_q)
    if emb.shape[1] != d_q:
        raise ValueError(f"embedding dim {emb.shape[1]} != projector dim {d_q}")
    refs = stack_reference_points(queries)
    return emb + refs @ rp.weight.T + rp.bias


def sincos_embedding(refs: np.ndarray, d_q: int) -> np.ndarray:
    """Conventional fixed sinusoidal embedding of reference points.

    Each coordinate is normalized to an angle over the +-50 m world range and
    expanded at octave frequencies; output is packed per coordinate and
    zero-padded to d_q.
    """
    refs = np.asarray(refs, dtype=float).reshape(-1, 3)
    n_freq = max(1, d_q // 6)
    angles = (refs + 50.0) / 100.0 * (2.0 * math.pi)  # (n, 3)
    freqs = 2.0 ** np.arange(n_freq)  # (f,)
    phases = angles[:, :, None] * freqs[None, None, :]  # (n, 3, f)
    feats = np.concatenate([np.sin(phases), np.cos(phases)], axis=2).reshape(refs.shape[0], -1)
    out = np.zeros((refs.shape[0], d_q))
    out[:, : min(d_q, feats.shape[1])] = feats[:, :d_q]
    return out


def project(tokens: np.ndarray, p: Projector) -> np.ndarray:
    """Rowwise affine map [N x d_q] -> [N x d_llm]."""
    tokens = np.asarray(tokens, dtype=float)
    if tokens.ndim != 2 or tokens.shape[1] != p.weight.shape[1]:
        raise ValueError(
            f"token matrix shape {tokens.shape} does not match projector input dim {p.weight.shape[1]}"
        )
    return tokens @ p.weight.T + p.bias


@dataclass(frozen=True)
class MemoryQueue:
    """FIFO of per-frame query lists, each truncated to its top-k confidences."""

    depth: int = MEMORY_DEPTH
    k: int = MEMORY_TOP_K
    slots: tuple[tuple[QueryToken, ...], ...] = ()


def _top_k(frame: Sequence[QueryToken], k: int) -> tuple[QueryToken, ...]:
    # Highest confidence wins; ties keep the earlier token. Selected tokens
    # are stored in their original order. Missing confidence ranks as 0.
    order = sorted(
        range(len(frame)),
        key=lambda i: (-(frame[i].confidence if frame[i].confidence is not None else 0.0), i),
    )
    keep = sorted(order[:k])
    return tuple(frame[i] for i in keep)


def memory_push(q: MemoryQueue, frame: Sequence[QueryToken]) -> MemoryQueue:
    """Append a frame (truncated to top-k) and evict the oldest past depth."""
    slots = q.slots + (_top_k(frame, q.k),)
    if len(slots) > q.depth:
        slots = slots[len(slots) - q.depth :]
    return MemoryQueue(depth=q.depth, k=q.k, slots=slots)


def memory_context(q: MemoryQueue, current: Sequence[QueryToken]) -> list[QueryToken]:
    """Stored frames oldest to newest, then the current frame, flattened."""
    out: list[QueryToken] = []
    for slot in q.slots:
        out.extend(slot)
    out.extend(current)
    return out


# ---------------------------------------------------------------------------
# Synthetic query generation from ground-truth scenes
# ---------------------------------------------------------------------------

_DET_RAW_DIM = 8 + len(CATEGORIES)
_MAP_RAW_DIM = 8


@dataclass
class QueryFeaturizer:
    """Fixed random featurizer that turns scene geometry into query content.

    Agent centers are perturbed with Gaussian noise before featurization;
    the token's confidence is an inverse-noise proxy, and its reference
    point is the (noisy) position the perception stack would report.
    """

    d_q: int = 32
    feature_seed: int = 7
    center_noise: float = 0.3
    _w_det: np.ndarray = field(init=False, repr=False)
    _w_map: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        rng = np.random.default_rng(self.feature_seed)
        self._w_det = rng.standard_normal((self.d_q, _DET_RAW_DIM)) / math.sqrt(_DET_RAW_DIM)
        self._w_map = rng.standard_normal((self.d_q, _MAP_RAW_DIM)) / math.sqrt(_MAP_RAW_DIM)

    def _agent_velocity(self, scene: Scene, frame_idx: int, agent_idx: int) -> tuple[float, float]:
        if frame_idx == 0:
            return (0.0, 0.0)
        agent = scene.frames[frame_idx].agents[agent_idx]
        prev = next((a for a in scene.frames[frame_idx - 1].agents if a.id == agent.id), None)
        if prev is None:
            return (0.0, 0.0)
        dt = scene.frames[frame_idx].t - scene.frames[frame_idx - 1].t
        return ((agent.center.x - prev.center.x) / dt, (agent.center.y - prev.center.y) / dt)

    def detection_queries(
        self, scene: Scene, frame_idx: int, ref_frame_idx: int, rng: np.random.Generator
    ) -> list[QueryToken]:
        """Per-agent tokens for one frame, expressed in the ego frame of
        ref_frame_idx (memory frames are motion-compensated to the current one).
        """
        ref_ego = scene.frames[ref_frame_idx].ego
        tokens = []
        for idx, agent in enumerate(scene.frames[frame_idx].agents):
            noise = rng.normal(0.0, self.center_noise, size=2) if self.center_noise > 0 else np.zeros(2)
            center = world_to_ego(agent.center, ref_ego.position, ref_ego.yaw)
            noisy = (center.x + noise[0], center.y + noise[1])
            vx, vy = self._agent_velocity(scene, frame_idx, idx)
            rxu, ryu = heading_right(ref_ego.yaw)
            fxu, fyu = heading_forward(ref_ego.yaw)
            v_ego = (rxu * vx + ryu * vy, fxu * vx + fyu * vy)
            h_rel = agent.heading - ref_ego.yaw
            onehot = np.zeros(len(CATEGORIES))
            onehot[CATEGORIES.index(agent.category)] = 1.0
            raw = np.concatenate(
                [
                    [
                        noisy[0] / 50.0,
                        noisy[1] / 50.0,
                        agent.length / 12.0,
                        agent.width / 3.0,
                        math.sin(h_rel),
                        math.cos(h_rel),
                        v_ego[0] / 15.0,
                        v_ego[1] / 15.0,
                    ],
                    onehot,
                ]
            )
            conf = 1.0 / (1.0 + float(np.hypot(noise[0], noise[1])))
            tokens.append(
                QueryToken(
                    embedding=np.tanh(self._w_det @ raw),
                    reference_point=(noisy[0], noisy[1], 0.0),
                    confidence=conf,
                )
            )
        return tokens

    def map_queries(self, scene: Scene, frame_idx: int) -> list[QueryToken]:
        """Per-lane tokens in the frame's own ego coordinates; no confidence."""
        ego = scene.frames[frame_idx].ego
        tokens = []
        for lane in scene.frames[frame_idx].lanes:
            pts = [world_to_ego(p, ego.position, ego.yaw) for p in lane.points]
            raw = np.array([c / 50.0 for p in pts for c in (p.x, p.y)])
            cx = sum(p.x for p in pts) / 4.0
            cy = sum(p.y for p in pts) / 4.0
            tokens.append(
                QueryToken(
                    embedding=np.tanh(self._w_map @ raw),
                    reference_point=(cx, cy, 0.0),
                    confidence=None,
                )
            )
        return tokens


def sample_rng(dataset_seed: int, scene_id: str, frame: int) -> np.random.Generator:
    """Deterministic per-sample noise stream."""
    key = zlib.crc32(f"{dataset_seed}|{scene_id}|{frame}|queries".encode()) & 0xFFFFFFFF
    return np.random.default_rng(key)


def planning_slot_queries(
    scene: Scene,
    t0: int,
    featurizer: QueryFeaturizer,
    dataset_seed: int,
    memory_depth: int = MEMORY_DEPTH,
    memory_k: int = MEMORY_TOP_K,
) -> list[list[QueryToken]]:
    """Queries for the two planning slots: detection (with memory) and map.

    The detection slot carries memory_context over the previous `memory_depth`
    frames followed by the current frame; the map slot is current-frame only.
    """
    rng = sample_rng(dataset_seed, scene.scene_id, t0)
    queue = MemoryQueue(depth=memory_depth, k=memory_k)
    for past in range(t0 - memory_depth, t0):
        if past < 0:
            continue
        queue = memory_push(queue, featurizer.detection_queries(scene, past, t0, rng))
    current = featurizer.detection_queries(scene, t0, t0, rng)
    det_slot = memory_context(queue, current)
    map_slot = featurizer.map_queries(scene, t0)
    return [det_slot, map_slot]


def detection_slot_queries(
    scene: Scene, t0: int, featurizer: QueryFeaturizer, dataset_seed: int
) -> list[list[QueryToken]]:
    """Single unified slot for detection questions (current frame only)."""
    rng = sample_rng(dataset_seed, scene.scene_id, t0)
    return [featurizer.detection_queries(scene, t0, t0, rng)]


def lane_slot_queries(scene: Scene, t0: int, featurizer: QueryFeaturizer) -> list[list[QueryToken]]:
    return [featurizer.map_queries(scene, t0)]
