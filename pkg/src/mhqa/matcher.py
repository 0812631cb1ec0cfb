"""Mention/question representations, additive attention and candidate merging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoders import EncodedSequence


class NoScorableCandidates(ValueError):
    pass


def _flat(states: Tensor) -> Tensor:
    return ad.reshape(states, (-1, states.shape[-1])) if states.ndim == 3 else states


def boundary_features(encoded: EncodedSequence, first, last) -> Tensor:
    """``[bw(first); fw(first); bw(last); fw(last)]`` per row.

    ``first``/``last`` index positions of the (flattened, if batched) encoding.
    """
    fw, bw = _flat(encoded.forward_states), _flat(encoded.backward_states)
    first = np.atleast_1d(np.asarray(first, dtype=np.int64))
    last = np.atleast_1d(np.asarray(last, dtype=np.int64))
    n = fw.shape[0]
    if first.size and (min(first.min(), last.min()) < 0 or max(first.max(), last.max()) >= n):
        raise IndexError(f"span outside an encoding of {n} positions")
    return ad.concat([ad.take_rows(bw, first), ad.take_rows(fw, first),
                      ad.take_rows(bw, last), ad.take_rows(fw, last)], axis=1)


def extract_mention_rep(encoded: EncodedSequence, mention, W1, b1) -> Tensor:
    """``W1 [bw(start); fw(start); bw(end); fw(end)] + b1`` for one mention or many.

    ``mention`` is a MentionAnnotation, or a pair of start/end index arrays.
    """
    if hasattr(mention, "span_start"):
        rep = boundary_features(encoded, mention.span_start, mention.span_end) @ W1 + b1
        return rep[0]
    start, end = mention
    return boundary_features(encoded, start, end) @ W1 + b1


def extract_question_rep(encoded: EncodedSequence, W2, b2, last=None) -> Tensor:
    """Question vector from its first and last positions.

    For a batch, ``last`` gives each row's final flattened position and the
    first position of row b is ``b * L``.
    """
    if len(encoded) == 0:
        raise ValueError("empty question")
    if encoded.forward_states.ndim == 2:
        n = encoded.forward_states.shape[0]
        return (boundary_features(encoded, 0, n - 1) @ W2 + b2)[0]
    B, L = encoded.forward_states.shape[:2]
    first = np.arange(B) * L
    last = first + (L - 1) if last is None else np.asarray(last)
    return boundary_features(encoded, first, last) @ W2 + b2


@dataclass
class AttentionHead:
    v: Parameter
    W: Parameter
    U: Parameter
    b: Parameter

    @classmethod
    def init(cls, d_mem: int, d_query: int, d_att: int, rng, name: str = "att"):
        return cls(
            Parameter(rng.uniform(-1, 1, d_att) / np.sqrt(d_att), f"{name}.v"),
            Parameter(rng.uniform(-1, 1, (d_mem, d_att)) / np.sqrt(d_mem), f"{name}.W"),
            Parameter(rng.uniform(-1, 1, (d_query, d_att)) / np.sqrt(d_query), f"{name}.U"),
            Parameter(np.zeros(d_att), f"{name}.b"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.v, self.W, self.U, self.b]


@dataclass
class AttentionParams:
    heads: list[AttentionHead]
    w_c: Parameter
    b_c: Parameter

    @classmethod
    def init(cls, steps: int, d_mention: int, d_state: int, d_query: int, d_att: int, rng,
             name: str = "match"):
        heads = [AttentionHead.init(d_mention if t == 0 else d_state, d_query, d_att, rng, f"{name}.att{t}")
                 for t in range(steps + 1)]
        # unit weights: the baseline term keeps the Local reader's scale, and steps
        # whose states are equal across nodes (no edges) only shift the scores
        w_c = np.ones(steps + 1)
        return cls(heads, Parameter(w_c, f"{name}.w_c"), Parameter(np.zeros(()), f"{name}.b_c"))

    @property
    def steps(self) -> int:
        return len(self.heads) - 1

    def parameters(self) -> list[Parameter]:
        return [p for h in self.heads for p in h.parameters()] + [self.w_c, self.b_c]


def attention_scores(reps: Tensor, question_rep: Tensor, head: AttentionHead) -> Tensor:
    """``e_k = v . tanh(rep_k W + q U + b)``.  ``question_rep`` is a single
    vector or one row per mention."""
    return ad.tanh(reps @ head.W + question_rep @ head.U + head.b) @ head.v


def combine_steps(step_scores, w_c, b_c) -> Tensor:
    """``e = w_c . [e_0 .. e_T] + b_c`` per mention."""
    E = ad.stack(list(step_scores), axis=1)
    if E.shape[1] != w_c.shape[0]:
        raise ad.ShapeError(f"{E.shape[1]} step scores vs {w_c.shape[0]} combination weights")
    return E @ w_c + b_c


@dataclass
class CandidateDistribution:
    probs: np.ndarray
    mention_probs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def argmax(self) -> int:
        return int(np.argmax(self.probs))  # first index wins ties

    def __getitem__(self, c):
        return self.probs[c]

    def __len__(self):
        return len(self.probs)


def merge_probabilities(scores: Tensor, segments, groups, num_segments: int, num_groups: int) -> Tensor:
    """Softmax within each instance (``segments``), then sum mention
    probabilities into candidate slots (``groups``)."""
    probs = ad.segment_softmax(scores, segments, num_segments)
    return ad.index_sum(probs, groups, num_groups)


def candidate_distribution(scores, links: dict[int, int], num_candidates: int) -> CandidateDistribution:
    """Candidate probabilities from scores of linked mentions.

    ``scores`` holds one combined score per mention; only mentions in
    ``links`` (mention -> candidate) take part in the softmax.
    """
    if not links:
        raise NoScorableCandidates("no scorable candidates")
    mentions = sorted(links)
    x = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    x = x[mentions]
    z = np.exp(x - x.max())
    p = z / z.sum()
    probs = np.zeros(num_candidates)
    np.add.at(probs, [links[k] for k in mentions], p)
    # merged sums can round one ulp past 1
    return CandidateDistribution(np.minimum(probs, 1.0), p)
