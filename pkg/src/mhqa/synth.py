"""Seeded generator of small multi-hop reading-comprehension datasets.

Each instance hides a fact chain ``subject -r1-> e1 -r2-> ... -> answer`` with
one fact per passage, next to distractors that look the same locally:

* distractor chains from other subjects, each ending at a wrong candidate
  through the same final relation.  With ``distractor_mode="relation"`` their
  first relation comes from a pool no question ever composes, so the answer
  chain is told apart by evidence one passage away from the candidate; with
  ``"subject"`` only the subject tells them apart;
* orphan facts ``X r_last W`` whose head ``X`` is a name the annotator missed
  (no mention), ending at a wrong candidate;
* noise facts linking non-candidate entities with unrelated relations.

A fact is rendered as ``[filler*] head relation tail .``.  With probability
``pronoun_rate`` an annotated head is introduced first and then referred to
by a pronoun: ``head is filler* . it relation tail .``.  Passages are
shuffled, and filler is prepended so that the two mentions of every bridging
entity are at least ``min_gap`` tokens apart.  Names are single tokens drawn
from a global pool, so instances from different seeds share a vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ENTITY, PRONOUN, Dataset, Instance, MentionAnnotation, TokenSequence, validate

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]
FILLER = ("the", "old", "large", "known", "many", "region", "people", "area", "often",
          "near", "during", "century", "also", "there", "first", "small", "river", "north",
          "south", "local", "since", "later", "city", "state", "part")
PRONOUNS = ("it", "they")


def entity_name(i: int) -> str:
    """Deterministic pseudo-word for pool index ``i`` (capitalized, 3 syllables)."""
    syll = [o + v for o in _ONSETS for v in _VOWELS]
    n = len(syll)
    word = syll[i % n] + syll[(i // n) % n] + syll[(i // (n * n)) % n]
    return word.capitalize()


def relation_name(i: int) -> str:
    return f"rel{i}"


@dataclass(frozen=True)
class GenConfig:
    seed: int = 7
    num_instances: int = 100
    hops: int = 2
    entities: int = 16          # distinct entities per instance
    distractor_facts: int = 1   # noise facts not touching any candidate
    vocab_size: int = 150       # size of the global entity-name pool
    min_gap: int = 21           # token gap between a bridging entity's two mentions
    candidates: int = 4
    orphans: int = 1            # wrong candidates reached only by an unannotated head
    relations: int = 6          # chain relations; distractor and noise facts use others
    distractor_relations: int = 2
    question_relations: int = 3
    pronoun_rate: float = 0.3
    max_filler: int = 2
    distractor_mode: str = "relation"  # or "subject"

    def __post_init__(self):
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        if self.candidates < 2:
            raise ValueError("need at least 2 candidates")
        if not 0 <= self.orphans < self.candidates:
            raise ValueError("orphans must leave room for the answer")
        if self.candidates > self.entities:
            raise ValueError(f"infeasible: {self.candidates} candidates but {self.entities} entities")
        if self.required_entities > self.entities:
            raise ValueError(f"infeasible: layout needs {self.required_entities} entities, "
                             f"config allows {self.entities}")
        if self.entities + self.orphans > self.vocab_size:
            raise ValueError("name pool smaller than the entities needed per instance")
        if self.relations < self.hops:
            raise ValueError("need at least one chain relation per hop")
        if self.distractor_mode == "relation" and self.distractor_relations < 1:
            raise ValueError("relation distractors need at least one distractor relation")
        if self.distractor_mode not in ("relation", "subject"):
            raise ValueError(f"unknown distractor mode {self.distractor_mode!r}")

    @property
    def chains(self) -> int:
        """Full chains: the answer chain plus distractor chains."""
        return self.candidates - self.orphans

    @property
    def required_entities(self) -> int:
        noise = 1 if self.distractor_facts else 0
        return self.chains * (self.hops + 1) + self.orphans + noise

    @property
    def hop_distance(self) -> int:
        """Designed graph distance from subject to answer."""
        return 2 * self.hops - 1


class _Passage:
    def __init__(self):
        self.tokens: list[str] = []
        self.mentions: list[tuple[int, str, str]] = []  # (offset, chain, kind)

    def filler(self, rng, k):
        self.tokens.extend(FILLER[i] for i in rng.integers(0, len(FILLER), k))

    def mention(self, name, chain, kind=ENTITY):
        self.mentions.append((len(self.tokens), chain, kind))
        self.tokens.append(name)


def _fact_passage(rng, cfg, head, head_chain, rel, tail, tail_chain, annotate_head=True):
    p = _Passage()
    p.filler(rng, rng.integers(0, cfg.max_filler + 1))
    if annotate_head and rng.random() < cfg.pronoun_rate:
        p.mention(head, head_chain)
        p.tokens.append("is")
        p.filler(rng, rng.integers(1, cfg.max_filler + 2))
        p.tokens.append(".")
        p.mention(PRONOUNS[0], head_chain, PRONOUN)
    elif annotate_head:
        p.mention(head, head_chain)
    else:
        p.tokens.append(head)
    p.tokens.append(rel)
    p.mention(tail, tail_chain)
    p.tokens.append(".")
    return p


def _relation_plan(cfg: GenConfig) -> dict[int, tuple[int, ...]]:
    """Fixed map from question relation to the chain of relations it composes."""
    rng = np.random.default_rng(12345)
    return {q: tuple(int(r) for r in rng.choice(cfg.relations, cfg.hops, replace=False))
            for q in range(cfg.question_relations)}


def generate_instance(cfg: GenConfig, rng: np.random.Generator, idx: int = 0) -> Instance:
    names = [entity_name(int(i)) for i in rng.choice(cfg.vocab_size, cfg.entities + cfg.orphans,
                                                     replace=False)]
    pool = iter(names)
    chain_of: dict[str, str] = {}

    def new_entity():
        name = next(pool)
        chain_of[name] = f"c{len(chain_of)}"
        return name

    qrel = int(rng.integers(cfg.question_relations))
    rels = [relation_name(r) for r in _relation_plan(cfg)[qrel]]

    chains = [[new_entity() for _ in range(cfg.hops + 1)] for _ in range(cfg.chains)]
    passages: list[_Passage] = []
    links: list[tuple[int, int]] = []  # (passage of tail mention, passage of next head mention)
    for c, chain in enumerate(chains):
        chain_rels = list(rels)
        if c and cfg.distractor_mode == "relation" and cfg.hops > 1:
            chain_rels[0] = relation_name(cfg.relations + int(rng.integers(cfg.distractor_relations)))
        first = len(passages)
        for i in range(cfg.hops):
            h, t = chain[i], chain[i + 1]
            passages.append(_fact_passage(rng, cfg, h, chain_of[h], chain_rels[i], t, chain_of[t]))
        links.extend((first + i, first + i + 1) for i in range(cfg.hops - 1))
    orphan_tails = []
    for _ in range(cfg.orphans):
        head, tail = next(pool), new_entity()
        passages.append(_fact_passage(rng, cfg, head, "", rels[-1], tail, chain_of[tail], annotate_head=False))
        orphan_tails.append(tail)

    noise = [new_entity() for _ in range(cfg.entities - len(chain_of))]
    heads = [e for ch in chains for e in ch[:-1]] + noise
    noise_rels = [relation_name(cfg.relations + cfg.distractor_relations + k) for k in range(3)]
    for _ in range(cfg.distractor_facts if noise else 0):
        h = heads[rng.integers(len(heads))]
        t = noise[rng.integers(len(noise))]
        if t == h:
            continue
        r = noise_rels[rng.integers(len(noise_rels))]
        passages.append(_fact_passage(rng, cfg, h, chain_of[h], r, t, chain_of[t]))

    order = [int(i) for i in rng.permutation(len(passages))]
    position = {p: k for k, p in enumerate(order)}
    # pad later passages of each bridge until its two mentions are min_gap apart
    offsets = _layout([passages[p] for p in order])
    for a, b in sorted(links, key=lambda ab: max(position[ab[0]], position[ab[1]])):
        early, late = sorted((a, b), key=lambda p: position[p])
        pe = passages[early]
        pl = passages[late]
        end_mention = pe.mentions[-1][0] if early == a else _head_offset(pe)
        late_mention = _head_offset(pl) if late == b else pl.mentions[-1][0]
        gap = offsets[position[late]] + late_mention - (offsets[position[early]] + end_mention)
        if gap < cfg.min_gap:
            _prepend(pl, rng, cfg.min_gap - gap)
            offsets = _layout([passages[p] for p in order])

    tokens: list[list[str]] = []
    mentions: list[MentionAnnotation] = []
    off = 0
    for p in order:
        ps = passages[p]
        tokens.append(ps.tokens)
        for o, chain, kind in ps.mentions:
            mentions.append(MentionAnnotation(off + o, off + o, chain, kind))
        off += len(ps.tokens)

    answer = chains[0][-1]
    cands = [ch[-1] for ch in chains] + orphan_tails
    cand_order = [int(i) for i in rng.permutation(len(cands))]
    candidates = tuple(cands[i] for i in cand_order)
    subject = chains[0][0]
    inst = Instance(
        question=TokenSequence((subject, f"q{qrel}")),
        subject_chain_id=chain_of[subject],
        passages=TokenSequence.concatenate(tokens),
        mentions=tuple(mentions),
        candidates=candidates,
        answer_index=candidates.index(answer),
        id=f"s{cfg.seed}-{idx}",
        meta={"hops": cfg.hops, "hop_distance": cfg.hop_distance},
    )
    validate(inst, require_linked_answer=True)
    return inst


def _head_offset(p: _Passage) -> int:
    """Offset of the first mention in a fact passage (the head or its intro)."""
    return p.mentions[0][0]


def _prepend(p: _Passage, rng, k: int) -> None:
    extra = [FILLER[i] for i in rng.integers(0, len(FILLER), k)]
    p.tokens[:0] = extra
    p.mentions = [(o + k, c, kind) for o, c, kind in p.mentions]


def _layout(passages: list[_Passage]) -> list[int]:
    offs, off = [], 0
    for p in passages:
        offs.append(off)
        off += len(p.tokens)
    return offs


def generate(cfg: GenConfig, split: str = "train") -> Dataset:
    """A dataset of ``cfg.num_instances`` instances; a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    seeds = rng.integers(0, 2**63 - 1, cfg.num_instances)
    return Dataset(tuple(generate_instance(cfg, np.random.default_rng(int(s)), i)
                         for i, s in enumerate(seeds)), split)


def toy_instance(rng: np.random.Generator) -> Instance:
    """An 11-token, 5-mention instance for gradient checks and smoke tests.

    Two passages share the bridge entity ``cd`` (a Same edge); a pronoun
    refers back to the subject ``ab``.  Filler tokens and the answer vary with
    ``rng``.  Graph edges appear with ``tau_long=4, tau_window=3``.
    """
    fill = ("x", "y", "z", "is")
    p1 = [fill[i] for i in rng.integers(0, len(fill), 6)]
    p2 = [fill[i] for i in rng.integers(0, len(fill), 5)]
    p1[0], p1[2], p1[4] = "ab", "it", "cd"
    p2[1], p2[3] = "cd", "ef"
    mentions = (MentionAnnotation(0, 0, "a"), MentionAnnotation(2, 2, "a", PRONOUN),
                MentionAnnotation(4, 4, "b"), MentionAnnotation(7, 7, "b"), MentionAnnotation(9, 9, "c"))
    inst = Instance(TokenSequence(("ab", "q")), "a", TokenSequence.concatenate([p1, p2]), mentions,
                    ("cd", "ef"), int(rng.integers(2)), id="toy")
    validate(inst)
    return inst
