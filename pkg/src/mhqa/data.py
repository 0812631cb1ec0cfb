"""Instance schema, JSON-lines dataset IO and mention-to-candidate linking.

A dataset file holds one JSON object per line::

    {"question": ["hanging_gardens", "country"], "subject_chain": "c0",
     "passages": [["The", "Hanging", ...], [...]],
     "mentions": [{"start": 0, "end": 2, "chain": "c0", "kind": "entity"}, ...],
     "candidates": ["Iran", "India", ...], "answer": 1}

Tokens are given pre-tokenized.  Mention offsets are global over the
concatenation of ``passages`` in order, ends inclusive.  Optional keys
``id`` and ``meta`` are carried through untouched.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

ENTITY = "entity"
PRONOUN = "pronoun"
SPLITS = ("train", "dev", "test")


class DatasetError(ValueError):
    pass


def normalize(text: str) -> str:
    """Case-fold and collapse internal whitespace."""
    return re.sub(r"\s+", " ", text).strip().casefold()


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    passage_boundaries: tuple[int, ...] = (0,)

    def __post_init__(self):
        b = self.passage_boundaries
        if not b or b[0] != 0:
            raise DatasetError(f"passage boundaries must start at 0, got {list(b)}")
        if any(x >= y for x, y in zip(b, b[1:])):
            raise DatasetError(f"passage boundaries must be strictly increasing, got {list(b)}")
        if self.tokens and b[-1] >= len(self.tokens):
            raise DatasetError(f"boundary {b[-1]} is past the last token ({len(self.tokens)} tokens)")

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def concatenate(cls, passages: Iterable[Iterable[str]]) -> "TokenSequence":
        tokens: list[str] = []
        bounds: list[int] = []
        for p in passages:
            p = list(p)
            if not p:
                raise DatasetError("empty passage")
            bounds.append(len(tokens))
            tokens.extend(p)
        return cls(tuple(tokens), tuple(bounds) or (0,))

    def passage_of(self, index: int) -> int:
        """Index of the passage containing token ``index``."""
        lo = 0
        for i, b in enumerate(self.passage_boundaries):
            if b <= index:
                lo = i
            else:
                break
        return lo

    def span_text(self, start: int, end: int) -> str:
        return " ".join(self.tokens[start:end + 1])

    def passages(self) -> list[tuple[str, ...]]:
        b = list(self.passage_boundaries) + [len(self.tokens)]
        return [self.tokens[s:e] for s, e in zip(b, b[1:])]


@dataclass(frozen=True)
class MentionAnnotation:
    span_start: int
    span_end: int
    chain_id: str
    kind: str = ENTITY

    @property
    def is_pronoun(self) -> bool:
        return self.kind == PRONOUN


@dataclass(frozen=True)
class Instance:
    question: TokenSequence
    subject_chain_id: str
    passages: TokenSequence
    mentions: tuple[MentionAnnotation, ...]
    candidates: tuple[str, ...]
    answer_index: int
    id: str = ""
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def mention_text(self, k: int) -> str:
        m = self.mentions[k]
        return self.passages.span_text(m.span_start, m.span_end)

    def mention_passage(self, k: int) -> int:
        return self.passages.passage_of(self.mentions[k].span_start)

    @property
    def answer(self) -> str:
        return self.candidates[self.answer_index]


@dataclass(frozen=True)
class Dataset:
    instances: tuple[Instance, ...]
    split: str = "train"

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]


def validate(inst: Instance, *, require_linked_answer: bool = False) -> None:
    """Raise :class:`DatasetError` if ``inst`` breaks a schema invariant."""
    n = len(inst.passages)
    if not inst.question.tokens:
        raise DatasetError("empty question")
    if not inst.candidates:
        raise DatasetError("no candidates")
    if not 0 <= inst.answer_index < len(inst.candidates):
        raise DatasetError(f"answer index {inst.answer_index} out of range for {len(inst.candidates)} candidates")
    seen: dict[tuple[int, int], str] = {}
    for k, m in enumerate(inst.mentions):
        if not 0 <= m.span_start <= m.span_end < n:
            raise DatasetError(f"mention {k} span [{m.span_start}, {m.span_end}] outside {n} tokens")
        if m.kind not in (ENTITY, PRONOUN):
            raise DatasetError(f"mention {k} has unknown kind {m.kind!r}")
        if m.is_pronoun and m.span_start != m.span_end:
            raise DatasetError(f"pronoun mention {k} spans more than one token")
        if inst.passages.passage_of(m.span_start) != inst.passages.passage_of(m.span_end):
            raise DatasetError(f"mention {k} crosses a passage boundary")
        key = (m.span_start, m.span_end)
        if key in seen and seen[key] != m.chain_id:
            raise DatasetError(f"mention {k} repeats span {list(key)} with conflicting chains "
                               f"{seen[key]!r} and {m.chain_id!r}")
        seen[key] = m.chain_id
    if require_linked_answer and inst.answer_index not in link_candidates(inst).values():
        raise DatasetError("no mention links to the answer candidate")


def link_candidates(inst: Instance) -> dict[int, int]:
    """Map mention index to candidate index by normalized exact match.

    Pronouns inherit the candidate of the entity mentions on their chain when
    that candidate is unique.
    """
    by_text: dict[str, int] = {}
    for c, text in enumerate(inst.candidates):
        by_text.setdefault(normalize(text), c)
    links: dict[int, int] = {}
    chain_cands: dict[str, set[int]] = {}
    for k, m in enumerate(inst.mentions):
        if m.is_pronoun:
            continue
        c = by_text.get(normalize(inst.mention_text(k)))
        if c is not None:
            links[k] = c
            chain_cands.setdefault(m.chain_id, set()).add(c)
    for k, m in enumerate(inst.mentions):
        if m.is_pronoun:
            cands = chain_cands.get(m.chain_id, set())
            if len(cands) == 1:
                links[k] = next(iter(cands))
    return dict(sorted(links.items()))


# -- serialization ---------------------------------------------------------

def instance_from_record(rec: dict) -> Instance:
    try:
        passages = TokenSequence.concatenate(rec["passages"])
        mentions = tuple(
            MentionAnnotation(int(m["start"]), int(m["end"]), str(m["chain"]), m.get("kind", ENTITY))
            for m in rec["mentions"]
        )
        inst = Instance(
            question=TokenSequence(tuple(rec["question"])),
            subject_chain_id=str(rec["subject_chain"]),
            passages=passages,
            mentions=mentions,
            candidates=tuple(rec["candidates"]),
            answer_index=int(rec["answer"]),
            id=str(rec.get("id", "")),
            meta=dict(rec.get("meta", {})),
        )
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"malformed record: {exc!r}") from None
    validate(inst)
    return inst


def instance_to_record(inst: Instance) -> dict:
    rec = {
        "question": list(inst.question.tokens),
        "subject_chain": inst.subject_chain_id,
        "passages": [list(p) for p in inst.passages.passages()],
        "mentions": [{"start": m.span_start, "end": m.span_end, "chain": m.chain_id, "kind": m.kind}
                     for m in inst.mentions],
        "candidates": list(inst.candidates),
        "answer": inst.answer_index,
    }
    if inst.id:
        rec["id"] = inst.id
    if inst.meta:
        rec["meta"] = inst.meta
    return rec


def parse_dataset(path, split: str = "train") -> Dataset:
    """Read a JSON-lines dataset file.  Errors name the offending line."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    instances = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise DatasetError("record is not an object")
                instances.append(instance_from_record(rec))
            except (json.JSONDecodeError, DatasetError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    if not instances:
        raise DatasetError("empty dataset")
    return Dataset(tuple(instances), split)


def write_dataset(dataset: Dataset | Iterable[Instance], path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for inst in dataset:
            fh.write(json.dumps(instance_to_record(inst), ensure_ascii=False) + "\n")
