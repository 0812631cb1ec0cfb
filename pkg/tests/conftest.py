import numpy as np
import pytest

from mhqa.data import ENTITY, PRONOUN, Instance, MentionAnnotation, TokenSequence

P1 = ("The Hanging Gardens , in Mumbai , also known as Pherozeshah Mehta Gardens , are terraced "
      "gardens They provide sunset views over the Arabian Sea .").split()
P2 = ("Mumbai ( also known as Bombay , the official name until 1995 ) is the capital city of the "
      "Indian state of Maharashtra . It is the most populous city in India .").split()
P3 = ("The Arabian Sea is a region of the northern Indian Ocean bounded on the north by Pakistan "
      "and Iran , on the west by northeastern Somalia and the Arabian Peninsula , and on the east "
      "by India .").split()

# (start, end, chain, kind) with offsets over P1 + P2 + P3
GARDENS_MENTIONS = [
    (0, 2, "hg", ENTITY),        # The Hanging Gardens
    (5, 5, "mumbai", ENTITY),    # Mumbai
    (17, 17, "hg", PRONOUN),     # They
    (23, 24, "sea", ENTITY),     # Arabian Sea
    (26, 26, "mumbai", ENTITY),  # Mumbai
    (50, 50, "mumbai", PRONOUN), # It
    (57, 57, "india", ENTITY),   # India
    (60, 61, "sea", ENTITY),     # Arabian Sea
    (75, 75, "pakistan", ENTITY),
    (77, 77, "iran", ENTITY),
    (84, 84, "somalia", ENTITY),
    (95, 95, "india", ENTITY),
]


def gardens_record():
    return {
        "question": ["the", "hanging", "gardens", "country"],
        "subject_chain": "hg",
        "passages": [P1, P2, P3],
        "mentions": [{"start": s, "end": e, "chain": c, "kind": k} for s, e, c, k in GARDENS_MENTIONS],
        "candidates": ["Iran", "India", "Pakistan", "Somalia"],
        "answer": 1,
        "id": "gardens",
    }


@pytest.fixture
def gardens():
    from mhqa.data import instance_from_record
    return instance_from_record(gardens_record())


def random_instance(rng, max_mentions=12, max_len=60, names=("a", "b", "c", "d"), n_passages=None,
                    tau_hint=20) -> Instance:
    """Small random instance: a few passages, random single/multi-token mentions."""
    n_passages = n_passages or int(rng.integers(1, 4))
    passages, bounds = [], []
    for _ in range(n_passages):
        passages.append([str(x) for x in rng.choice(list(names) + ["w", "x", "."], rng.integers(3, max_len // n_passages + 4))])
    toks = TokenSequence.concatenate(passages)
    n = len(toks)
    used = set()
    mentions = []
    for _ in range(int(rng.integers(1, max_mentions + 1))):
        s = int(rng.integers(0, n))
        p = toks.passage_of(s)
        b = list(toks.passage_boundaries) + [n]
        pron = rng.random() < 0.25
        e = s if pron else min(s + int(rng.integers(0, 2)), b[p + 1] - 1)
        if (s, e) in used:
            continue
        used.add((s, e))
        mentions.append(MentionAnnotation(s, e, f"c{rng.integers(0, 4)}", PRONOUN if pron else ENTITY))
    return Instance(
        question=TokenSequence(("q",)),
        subject_chain_id="c0",
        passages=toks,
        mentions=tuple(mentions),
        candidates=tuple(names),
        answer_index=0,
    )
