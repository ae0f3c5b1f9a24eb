"""Toy decoder-only planner with continuous 3D-token injection.

The stream is ordinary discrete tokens (question + answer text) except at
`<query>` slots, where rows projected from query space are spliced in.
Injected rows take ordinary sequential position ids; their spatial
information is meant to come from reference points, not sequence position.

Everything runs in float64 on CPU with a seeded initializer, so training
and inference are bit-reproducible and the analytic gradients can be
checked against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..qa_codec import ChainSpec
from ..query_tokens import RP_STRATEGIES
from .vocab import Vocab


class LengthError(ValueError):
    """Stream exceeds the model context."""


class AssemblyError(ValueError):
    """Slot/query mismatch while assembling a stream."""


@dataclass
class PlannerConfig:
    d_q: int = 32
    d_llm: int = 64
    n_layers: int = 2
    n_heads: int = 4
    context: int = 512
    chain: str = "V-A-P"
    rp_embedding: str = "rp"
    use_queries: bool = True
    max_queries: int = 96
    feature_seed: int = 7
    center_noise: float = 0.3
    lr: float = 2e-5
    weight_decay: float = 1e-4
    warmup_frac: float = 0.03
    epochs: int = 4
    max_new_tokens: int = 96

    def validate(self) -> None:
        if self.d_llm % self.n_heads != 0:
            raise ValueError(f"d_llm={self.d_llm} not divisible by n_heads={self.n_heads}")
        if self.rp_embedding not in RP_STRATEGIES:
            raise ValueError(f"rp_embedding must be one of {RP_STRATEGIES}")
        ChainSpec.from_string(self.chain)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "PlannerConfig":
        cfg = cls(**obj)
        cfg.validate()
        return cfg


@dataclass
class Sample:
    """One training/inference record: token ids plus per-slot query arrays."""

    question_ids: list[int]
    slot_queries: list[tuple[np.ndarray, np.ndarray]]  # (embeddings [n,d_q], refs [n,3])
    answer_ids: list[int]
    meta: dict = field(default_factory=dict)


@dataclass
class TokenStream:
    embeddings: torch.Tensor  # [T, d_llm]
    ids: list[int]  # -1 at injected (continuous) positions
    answer_start: int | None  # stream index of the first answer token


def torch_sincos_embedding(refs: torch.Tensor, d_q: int) -> torch.Tensor:
    """Torch mirror of query_tokens.sincos_embedding (same packing)."""
    refs = refs.reshape(-1, 3)
    n_freq = max(1, d_q // 6)
    angles = (refs + 50.0) / 100.0 * (2.0 * math.pi)
    freqs = (2.0 ** torch.arange(n_freq, dtype=refs.dtype)).to(refs.device)
    phases = angles[:, :, None] * freqs[None, None, :]
    feats = torch.cat([torch.sin(phases), torch.cos(phases)], dim=2).reshape(refs.shape[0], -1)
    out = torch.zeros((refs.shape[0], d_q), dtype=refs.dtype)
    out[:, : min(d_q, feats.shape[1])] = feats[:, :d_q]
    return out


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = nn.Linear(d_model, d_model)
        self.wk = nn.Linear(d_model, d_model)
        self.wv = nn.Linear(d_model, d_model)
        self.wo = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t, d = x.shape
        q = self.wq(x).view(t, self.n_heads, self.d_head).transpose(0, 1)
        k = self.wk(x).view(t, self.n_heads, self.d_head).transpose(0, 1)
        v = self.wv(x).view(t, self.n_heads, self.d_head).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        att = torch.softmax(scores, dim=-1)
        y = (att @ v).transpose(0, 1).reshape(t, d)
        return self.wo(y)


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.fc1 = nn.Linear(d_model, 4 * d_model)
        self.fc2 = nn.Linear(4 * d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.fc2(F.gelu(self.fc1(self.ln2(x))))
        return x


class PlannerModel(nn.Module):
    def __init__(self, config: PlannerConfig, vocab: Vocab, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        self.vocab = vocab
        self.tok_emb = nn.Embedding(len(vocab), config.d_llm)
        self.pos_emb = nn.Embedding(config.context, config.d_llm)
        self.blocks = nn.ModuleList(Block(config.d_llm, config.n_heads) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(config.d_llm)
        self.head = nn.Linear(config.d_llm, len(vocab))
        self.projector = nn.Linear(config.d_q, config.d_llm)
        self.rp_proj = nn.Linear(3, config.d_q)
        if config.rp_embedding == "learned":
            self.learned_rp = nn.Parameter(torch.zeros(config.max_queries, config.d_q))
        self.double()
        self._init_weights(seed)

    def _init_weights(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)

        def normal_(p: torch.Tensor) -> None:
            with torch.no_grad():
                p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64) * 0.02)

        normal_(self.tok_emb.weight)
        normal_(self.pos_emb.weight)
        for block in self.blocks:
            for lin in (block.attn.wq, block.attn.wk, block.attn.wv, block.attn.wo, block.fc1, block.fc2):
                normal_(lin.weight)
                nn.init.zeros_(lin.bias)
        normal_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        normal_(self.projector.weight)
        nn.init.zeros_(self.projector.bias)
        # Reference-point projector starts at exactly zero: an untrained
        # embedder must leave query content untouched.
        nn.init.zeros_(self.rp_proj.weight)
        nn.init.zeros_(self.rp_proj.bias)
        if self.config.rp_embedding == "learned":
            normal_(self.learned_rp)

    # -- stream assembly ---------------------------------------------------

    def _embed_queries(self, emb: np.ndarray, refs: np.ndarray) -> torch.Tensor:
        base = torch.as_tensor(emb, dtype=torch.float64).reshape(-1, self.config.d_q)
        pts = torch.as_tensor(refs, dtype=torch.float64).reshape(-1, 3)
        if base.shape[0] != pts.shape[0]:
            raise AssemblyError(f"{base.shape[0]} embeddings vs {pts.shape[0]} reference points")
        strategy = self.config.rp_embedding
        if strategy == "rp":
            tokens = base + self.rp_proj(pts)
        elif strategy == "sincos":
            tokens = base + torch_sincos_embedding(pts, self.config.d_q)
        elif strategy == "learned":
            if base.shape[0] > self.learned_rp.shape[0]:
                raise AssemblyError(
                    f"{base.shape[0]} queries exceed learned table capacity {self.learned_rp.shape[0]}"
                )
            tokens = base + self.learned_rp[: base.shape[0]]
        else:  # none
            tokens = base
        return self.projector(tokens)

    def assemble_stream(self, sample: Sample, include_answer: bool = True) -> TokenStream:
        """BOS + question (slots spliced) [+ answer + EOS] as one embedded stream."""
        n_slots = sum(1 for i in sample.question_ids if i == self.vocab.query_id)
        if self.config.use_queries and n_slots != len(sample.slot_queries):
            raise AssemblyError(
                f"question has {n_slots} slots but {len(sample.slot_queries)} query sets were provided"
            )
        rows: list[torch.Tensor] = []
        ids: list[int] = []

        def push_discrete(token_ids: list[int]) -> None:
            if token_ids:
                idx = torch.tensor(token_ids, dtype=torch.long)
                rows.append(self.tok_emb(idx))
                ids.extend(token_ids)

        pending: list[int] = [self.vocab.bos_id]
        slot_no = 0
        for tid in sample.question_ids:
            if tid == self.vocab.query_id and self.config.use_queries:
                push_discrete(pending)
                pending = []
                emb, refs = sample.slot_queries[slot_no]
                slot_no += 1
                block = self._embed_queries(emb, refs)
                if block.shape[0]:
                    rows.append(block)
                    ids.extend([-1] * block.shape[0])
            else:
                pending.append(tid)
        push_discrete(pending)

        answer_start = None
        if include_answer:
            answer_start = len(ids)
            push_discrete(list(sample.answer_ids) + [self.vocab.eos_id])

        embeddings = torch.cat(rows, dim=0)
        if embeddings.shape[0] > self.config.context:
            raise LengthError(
                f"stream length {embeddings.shape[0]} exceeds context {self.config.context}"
            )
        return TokenStream(embeddings=embeddings, ids=ids, answer_start=answer_start)

    # -- forward / loss ------------------------------------------------------

    def forward_stream(self, embeddings: torch.Tensor) -> torch.Tensor:
        t = embeddings.shape[0]
        if t > self.config.context:
            raise LengthError(f"stream length {t} exceeds context {self.config.context}")
        pos = torch.arange(t, dtype=torch.long)
        x = embeddings + self.pos_emb(pos)
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))

    def loss_on(self, sample: Sample) -> torch.Tensor:
        """Mean token NLL over the answer span (question and injected rows masked out)."""
        stream = self.assemble_stream(sample, include_answer=True)
        if stream.answer_start is None or stream.answer_start >= len(stream.ids):
            raise ValueError("sample has an empty answer span")
        logits = self.forward_stream(stream.embeddings)
        targets = torch.tensor(stream.ids[stream.answer_start :], dtype=torch.long)
        pred = logits[stream.answer_start - 1 : -1]
        return F.cross_entropy(pred, targets)


def token_nll(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood; exposed for oracle tests against by-hand softmax."""
    if targets.numel() == 0:
        raise ValueError("empty target span")
    return F.cross_entropy(logits, targets)
