"""Self-describing checkpoint container: JSON with base64 row-major tensors."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np
import torch

from .model import PlannerConfig, PlannerModel
from .vocab import Vocab

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: PlannerConfig
    vocab_tokens: list[str]
    tensors: dict[str, np.ndarray]
    seed: int
    step_count: int


def checkpoint_from_model(model: PlannerModel, seed: int, step_count: int) -> Checkpoint:
    tensors = {
        name: param.detach().cpu().numpy().copy() for name, param in model.state_dict().items()
    }
    return Checkpoint(
        config=model.config,
        vocab_tokens=list(model.vocab.tokens),
        tensors=tensors,
        seed=seed,
        step_count=step_count,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> PlannerModel:
    vocab = Vocab(tokens=list(ckpt.vocab_tokens))
    model = PlannerModel(ckpt.config, vocab, seed=ckpt.seed)
    state = {name: torch.as_tensor(arr) for name, arr in ckpt.tensors.items()}
    model.load_state_dict(state)
    return model


def _encode_tensor(arr: np.ndarray) -> dict:
    flat = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "data": base64.b64encode(flat.tobytes()).decode("ascii"),
    }


def _decode_tensor(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype=obj["dtype"]).copy()
    return arr.reshape(obj["shape"])


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    obj = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab_tokens,
        "seed": ckpt.seed,
        "step_count": ckpt.step_count,
        "tensors": {name: _encode_tensor(arr) for name, arr in sorted(ckpt.tensors.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {obj.get('format_version')!r}")
    return Checkpoint(
        config=PlannerConfig.from_dict(obj["config"]),
        vocab_tokens=list(obj["vocab"]),
        tensors={name: _decode_tensor(t) for name, t in obj["tensors"].items()},
        seed=int(obj["seed"]),
        step_count=int(obj["step_count"]),
    )
