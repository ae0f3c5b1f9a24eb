"""Training loop: decoupled-weight-decay Adam with warmup-then-cosine LR."""

from __future__ import annotations

import math
import random
from typing import Sequence

import torch

from .checkpoint import Checkpoint, checkpoint_from_model
from .model import PlannerConfig, PlannerModel, Sample
from .vocab import Vocab


class TrainingError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def warmup_cosine_scale(step: int, total_steps: int, warmup_frac: float = 0.03) -> float:
    """LR multiplier: linear 0 -> 1 over the first warmup_frac of steps, then
    cosine decay to 0 at the end of training."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    warmup = max(1, round(warmup_frac * total_steps))
    if step < warmup:
        return step / warmup
    if total_steps == warmup:
        return 1.0
    progress = (step - warmup) / (total_steps - warmup)
    return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


def train(
    samples: Sequence[Sample],
    config: PlannerConfig,
    vocab: Vocab,
    seed: int = 0,
    epochs: int | None = None,
    log_every: int = 0,
) -> Checkpoint:
    """Teacher-forced training, batch size 1, deterministic given seed."""
    if not samples:
        raise ValueError("training requires a non-empty dataset")
    epochs = epochs if epochs is not None else config.epochs
    torch.manual_seed(seed)
    model = PlannerModel(config, vocab, seed=seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    total_steps = epochs * len(samples)
    order_rng = random.Random(seed)
    step = 0
    for epoch in range(epochs):
        order = list(range(len(samples)))
        order_rng.shuffle(order)
        for idx in order:
            scale = warmup_cosine_scale(step, total_steps, config.warmup_frac)
            for group in optimizer.param_groups:
                group["lr"] = config.lr * scale
            loss = model.loss_on(samples[idx])
            if not torch.isfinite(loss):
                raise TrainingError(step, f"non-finite loss {loss.item()!r}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
            if log_every and step % log_every == 0:
                print(f"step {step}/{total_steps} loss {loss.item():.4f}")
    return checkpoint_from_model(model, seed=seed, step_count=step)
