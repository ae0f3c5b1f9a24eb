"""Token vocabulary for the toy planner.

Word-level: every word, punctuation mark and integer numeral that the
embedded question pools and the answer grammar can produce gets its own id.
The numerals 0..999 double as the bin tokens of the answer grammar. Unknown
words map to <unk> so lexing stays total; `<query>` lexes to the slot token
where continuous 3D-token rows are spliced in.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .. import qa_codec
from ..scene_sim import CATEGORIES

PAD, BOS, EOS, UNK, QUERY = "<pad>", "<bos>", "<eos>", "<unk>", "<query>"
SPECIALS = (PAD, BOS, EOS, UNK, QUERY)
MARKERS = ("VEL", "ACC", "YAW", "HIST", "WP", "CAT", "LANE")

_LEX_RE = re.compile(r"<query>|[A-Za-z_']+|\d+|[^\sA-Za-z0-9_']")

# Punctuation after which no space is rendered, and before which none is.
_TIGHT_AFTER = {"[", "(", ","}
_TIGHT_BEFORE = {"]", ")", ",", ".", ";", ":", "?", "!"}


def lex(text: str) -> list[str]:
    return _LEX_RE.findall(text)


def render(tokens: list[str]) -> str:
    """Join tokens back into text; bracket/comma spacing matches the answer grammar."""
    out: list[str] = []
    prev: str | None = None
    for tok in tokens:
        if prev is not None and prev not in _TIGHT_AFTER and tok not in _TIGHT_BEFORE:
            out.append(" ")
        out.append(tok)
        prev = tok
    return "".join(out)


def _pool_texts() -> list[str]:
    texts = list(qa_codec.DETECTION_QUESTIONS)
    texts += list(qa_codec.LANE_QUESTIONS)
    texts += [
        qa_codec.build_question("planning", i, command=cmd)
        for i in range(3)
        for cmd in qa_codec.COMMAND_TEXT
    ]
    texts += list(qa_codec.CAPTION_QUESTIONS)
    texts += [qa_codec.build_question("detection", 0, per_view=True)]
    texts += list(qa_codec.COMMAND_TEXT.values())
    texts += ["The scene contains vehicles and pedestrians around the ego car will"]
    return texts


@dataclass
class Vocab:
    tokens: list[str]

    def __post_init__(self) -> None:
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def query_id(self) -> int:
        return self.index[QUERY]

    def to_ids(self, text: str) -> list[int]:
        return [self.index.get(tok, self.unk_id) for tok in lex(text)]

    def to_text(self, ids: list[int]) -> str:
        return render([self.tokens[i] for i in ids])


def build_vocab() -> Vocab:
    """Deterministic vocabulary covering pools, grammar, numerals, categories."""
    words: set[str] = set()
    punct: set[str] = set()
    for text in _pool_texts():
        for tok in lex(text):
            if tok == QUERY:
                continue
            if re.fullmatch(r"\d+", tok):
                continue  # numerals are added as a dense block below
            if re.fullmatch(r"[A-Za-z_']+", tok):
                words.add(tok)
            else:
                punct.add(tok)
    words.update(CATEGORIES)
    words.difference_update(MARKERS)
    punct.update("[],.")
    numerals = [str(i) for i in range(1000)]
    tokens = list(SPECIALS) + list(MARKERS) + sorted(punct) + numerals + sorted(words)
    return Vocab(tokens=tokens)
