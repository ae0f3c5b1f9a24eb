"""Autoregressive decoding: greedy or temperature sampling, seeded."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .model import PlannerModel, Sample


@dataclass
class GenerationResult:
    text: str
    token_ids: list[int]
    truncated: bool  # no EOS within the length cap


def generate(
    model: PlannerModel,
    sample: Sample,
    mode: str = "greedy",
    temperature: float = 1.0,
    seed: int = 0,
    max_new_tokens: int | None = None,
) -> GenerationResult:
    """Decode an answer for the sample's question.

    Greedy mode is fully deterministic; sampling is deterministic per seed.
    Decoding stops at EOS or when the context / token cap runs out, in which
    case the result carries a truncation flag.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    cap = max_new_tokens if max_new_tokens is not None else model.config.max_new_tokens
    gen = torch.Generator().manual_seed(seed)
    stream = model.assemble_stream(sample, include_answer=False)
    embeddings = stream.embeddings
    produced: list[int] = []
    truncated = True
    with torch.no_grad():
        for _ in range(cap):
            if embeddings.shape[0] >= model.config.context:
                break
            logits = model.forward_stream(embeddings)[-1]
            if mode == "greedy":
                next_id = int(torch.argmax(logits).item())
            else:
                probs = torch.softmax(logits / temperature, dim=-1)
                next_id = int(torch.multinomial(probs, 1, generator=gen).item())
            if next_id == model.vocab.eos_id:
                truncated = False
                break
            produced.append(next_id)
            row = model.tok_emb(torch.tensor([next_id], dtype=torch.long))
            embeddings = torch.cat([embeddings, row], dim=0)
    return GenerationResult(
        text=model.vocab.to_text(produced), token_ids=produced, truncated=truncated
    )
