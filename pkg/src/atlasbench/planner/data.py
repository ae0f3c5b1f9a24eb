"""Turn QA pairs plus scenes into planner samples with per-slot query arrays."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..qa_codec import QaPair
from ..query_tokens import (
    QueryFeaturizer,
    QueryToken,
    detection_slot_queries,
    lane_slot_queries,
    planning_slot_queries,
    stack_embeddings,
    stack_reference_points,
)
from ..scene_sim import Scene
from .model import PlannerConfig, Sample
from .vocab import Vocab


def featurizer_for(config: PlannerConfig) -> QueryFeaturizer:
    return QueryFeaturizer(
        d_q=config.d_q, feature_seed=config.feature_seed, center_noise=config.center_noise
    )


def _slot_arrays(tokens: list[QueryToken], d_q: int) -> tuple[np.ndarray, np.ndarray]:
    return stack_embeddings(tokens, d_q), stack_reference_points(tokens)


def prepare_sample(
    pair: QaPair,
    scene: Scene,
    config: PlannerConfig,
    vocab: Vocab,
    featurizer: QueryFeaturizer,
    dataset_seed: int,
) -> Sample:
    t0 = int(pair.meta["frame"])
    if pair.task == "planning":
        slots = planning_slot_queries(scene, t0, featurizer, dataset_seed)
    elif pair.task == "detection":
        slots = detection_slot_queries(scene, t0, featurizer, dataset_seed)
    elif pair.task == "lane":
        slots = lane_slot_queries(scene, t0, featurizer)
    else:
        slots = []
    return Sample(
        question_ids=vocab.to_ids(pair.question),
        slot_queries=[_slot_arrays(s, config.d_q) for s in slots],
        answer_ids=vocab.to_ids(pair.answer),
        meta=dict(pair.meta, task=pair.task),
    )


def prepare_samples(
    pairs: Sequence[QaPair],
    scenes: Sequence[Scene],
    config: PlannerConfig,
    vocab: Vocab,
    dataset_seed: int = 0,
) -> list[Sample]:
    by_id = {s.scene_id: s for s in scenes}
    featurizer = featurizer_for(config)
    samples = []
    for pair in pairs:
        scene = by_id.get(pair.meta["scene_id"])
        if scene is None:
            raise ValueError(f"QA pair references unknown scene {pair.meta['scene_id']!r}")
        samples.append(prepare_sample(pair, scene, config, vocab, featurizer, dataset_seed))
    return samples
