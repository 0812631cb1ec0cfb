"""Reader variants and batched scoring.

Variants (``ModelConfig.kind``):

``local``       BiLSTM encoding, baseline matching only
``coref-lstm``  DAG-LSTM over sequential + coreference edges, baseline matching
``coref-grn``   BiLSTM + GRN over coreference edges only
``mhqa-gcn``    BiLSTM + GCN over the full evidence graph
``mhqa-grn``    BiLSTM + GRN over the full evidence graph
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import Instance, link_candidates
from .encoders import EmbeddingTable, LstmParams, bilstm_encode, coref_dag, dag_lstm_encode
from .graph import ALL_EDGES, EdgeType, EvidenceGraph, GraphConfig, build_graph
from .graph_encoders import GCN, GRN, GraphEncoderConfig, GraphParams, neighbor_matrix, run
from .matcher import (AttentionParams, CandidateDistribution, attention_scores, combine_steps,
                      extract_mention_rep, extract_question_rep, merge_probabilities)

KINDS = ("local", "coref-lstm", "coref-grn", "mhqa-gcn", "mhqa-grn")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mhqa-grn"
    emb_dim: int = 300
    hidden: int = 300
    steps: int = 3
    dropout: float = 0.1
    edge_types: frozenset = ALL_EDGES
    graph: GraphConfig = field(default_factory=GraphConfig)
    candidate: str = "sigmoid"  # DAG-LSTM / GRN candidate activation
    self_loop: bool = False
    shared_steps: bool = True
    trainable_embeddings: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def uses_graph(self) -> bool:
        return self.kind in ("coref-grn", "mhqa-gcn", "mhqa-grn")

    @property
    def graph_edges(self) -> frozenset:
        return frozenset({EdgeType.COREF}) if self.kind == "coref-grn" else frozenset(self.edge_types)

    @property
    def graph_encoder(self) -> GraphEncoderConfig:
        return GraphEncoderConfig(self.steps, GCN if self.kind == "mhqa-gcn" else GRN,
                                  self.candidate, self.self_loop, self.shared_steps)

    @property
    def matching_steps(self) -> int:
        return self.steps if self.uses_graph else 0


@dataclass
class Prepared:
    """Per-instance arrays needed for scoring, computed once."""

    instance: Instance
    passage_ids: np.ndarray
    question_ids: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    links: dict[int, int]
    graph: EvidenceGraph | None
    dag: list[list[int]] | None

    @property
    def num_candidates(self) -> int:
        return len(self.instance.candidates)

    @property
    def answer_linked(self) -> bool:
        return self.instance.answer_index in self.links.values()


class Reader:
    """Parameters of one variant plus batched forward scoring."""

    def __init__(self, config: ModelConfig, embeddings: EmbeddingTable, rng: np.random.Generator):
        self.config = config
        self.embeddings = embeddings
        d, H = embeddings.dim, config.hidden
        self.passage_fw = LstmParams.init(d, H, rng, "passage.fw")
        self.passage_bw = LstmParams.init(d, H, rng, "passage.bw")
        self.question_fw = LstmParams.init(d, H, rng, "question.fw")
        self.question_bw = LstmParams.init(d, H, rng, "question.bw")
        s = 1.0 / np.sqrt(4 * H)
        self.W1 = Parameter(rng.uniform(-s, s, (4 * H, H)), "rep.W1")
        self.b1 = Parameter(np.zeros(H), "rep.b1")
        self.W2 = Parameter(rng.uniform(-s, s, (4 * H, H)), "rep.W2")
        self.b2 = Parameter(np.zeros(H), "rep.b2")
        # attention first: the baseline head then starts identical to the Local reader's
        self.attention = AttentionParams.init(config.matching_steps, H, H, H, H, rng)
        self.graph_params = (GraphParams.init(H, H, H, config.graph_encoder, rng)
                             if config.uses_graph else None)

    def parameters(self) -> dict[str, Parameter]:
        ps = [*self.passage_fw.parameters(), *self.passage_bw.parameters(),
              *self.question_fw.parameters(), *self.question_bw.parameters(),
              self.W1, self.b1, self.W2, self.b2, *self.attention.parameters()]
        if self.graph_params is not None:
            ps += self.graph_params.parameters()
        if self.embeddings.trainable:
            ps.append(self.embeddings.matrix)
        return {p.name: p for p in ps}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(tensors)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, p in params.items():
            if tensors[k].shape != p.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {tensors[k].shape} vs model {p.shape}")
            p.data[...] = tensors[k]

    # -- preprocessing ------------------------------------------------------

    def prepare(self, inst: Instance) -> Prepared:
        cfg = self.config
        graph = None
        if cfg.uses_graph:
            graph = build_graph(inst, cfg.graph, cfg.graph_edges)
        return Prepared(
            instance=inst,
            passage_ids=self.embeddings.ids(inst.passages.tokens),
            question_ids=self.embeddings.ids(inst.question.tokens),
            starts=np.array([m.span_start for m in inst.mentions], dtype=np.int64),
            ends=np.array([m.span_end for m in inst.mentions], dtype=np.int64),
            links=link_candidates(inst),
            graph=graph,
            dag=coref_dag(inst) if cfg.kind == "coref-lstm" else None,
        )

    # -- scoring ------------------------------------------------------------

    def forward(self, batch: list[Prepared], rng: np.random.Generator | None = None):
        """Candidate probabilities for a batch.

        Returns ``(probs, offsets)``: a tensor with every instance's candidate
        slots laid end to end, and the start offset of each instance's slots.
        ``rng`` enables dropout.  Instances without linked mentions get all-zero
        slots.
        """
        cfg = self.config
        rate = cfg.dropout if rng is not None else 0.0
        B = len(batch)
        L = max(len(p.passage_ids) for p in batch)
        Lq = max(len(p.question_ids) for p in batch)
        ids = np.zeros((B, L), dtype=np.int64)
        mask = np.zeros((B, L))
        qids = np.zeros((B, Lq), dtype=np.int64)
        qmask = np.zeros((B, Lq))
        for b, p in enumerate(batch):
            ids[b, :len(p.passage_ids)] = p.passage_ids
            mask[b, :len(p.passage_ids)] = 1.0
            qids[b, :len(p.question_ids)] = p.question_ids
            qmask[b, :len(p.question_ids)] = 1.0

        x = ad.dropout(self.embeddings.lookup(ids), rate, rng)
        if cfg.kind == "coref-lstm":
            enc = dag_lstm_encode(x, [p.dag for p in batch], self.passage_fw, self.passage_bw, mask,
                                  cfg.candidate)
        else:
            enc = bilstm_encode(x, self.passage_fw, self.passage_bw, mask)
        xq = ad.dropout(self.embeddings.lookup(qids), rate, rng)
        qenc = bilstm_encode(xq, self.question_fw, self.question_bw, qmask)

        node_off = np.cumsum([0] + [len(p.starts) for p in batch])
        starts = np.concatenate([p.starts + b * L for b, p in enumerate(batch)])
        ends = np.concatenate([p.ends + b * L for b, p in enumerate(batch)])
        hm = ad.dropout(extract_mention_rep(enc, (starts, ends), self.W1, self.b1), rate, rng)
        qlast = np.array([b * Lq + len(p.question_ids) - 1 for b, p in enumerate(batch)])
        hq = ad.dropout(extract_question_rep(qenc, self.W2, self.b2, qlast), rate, rng)

        cand_off = np.cumsum([0] + [p.num_candidates for p in batch])
        linked, segments, groups = [], [], []
        for b, p in enumerate(batch):
            for k, c in p.links.items():
                linked.append(node_off[b] + k)
                segments.append(b)
                groups.append(cand_off[b] + c)
        linked = np.array(linked, dtype=np.int64)
        segments = np.array(segments, dtype=np.int64)
        if len(linked) == 0:
            return Tensor(np.zeros(cand_off[-1])), cand_off[:-1]

        hq_linked = ad.take_rows(hq, segments)
        heads = self.attention.heads
        scores = [attention_scores(ad.take_rows(hm, linked), hq_linked, heads[0])]
        if cfg.uses_graph:
            node_inst = np.repeat(np.arange(B), np.diff(node_off))
            A = neighbor_matrix([p.graph for p in batch], cfg.self_loop)
            states = run(A, hm, ad.take_rows(hq, node_inst), cfg.graph_encoder, self.graph_params)
            for t in range(1, len(states)):
                scores.append(attention_scores(ad.take_rows(states[t].s, linked), hq_linked, heads[t]))
            e = combine_steps(scores, self.attention.w_c, self.attention.b_c)
        else:
            e = scores[0]
        probs = merge_probabilities(e, segments, groups, B, int(cand_off[-1]))
        return probs, cand_off[:-1]

    def loss(self, batch: list[Prepared], rng=None, l2_weight: float = 0.0) -> Tensor:
        """Mean ``-log Pr(answer)`` over the batch plus ``l2_weight * sum ||theta||^2``."""
        probs, offsets = self.forward(batch, rng)
        answers = np.array([off + p.instance.answer_index for off, p in zip(offsets, batch)])
        data = ad.neg(ad.total(ad.log(ad.take_rows(probs, answers)))) * (1.0 / len(batch))
        if l2_weight:
            reg = None
            for p in self.parameters().values():
                term = ad.square_norm(p)
                reg = term if reg is None else reg + term
            data = data + reg * l2_weight
        return data

    def predict(self, batch: list[Prepared]) -> list[CandidateDistribution | None]:
        probs, offsets = self.forward(batch)
        out = []
        for off, p in zip(offsets, batch):
            if not p.links:
                out.append(None)
                continue
            out.append(CandidateDistribution(probs.data[off:off + p.num_candidates].copy()))
        return out


def with_kind(config: ModelConfig, kind: str, **changes) -> ModelConfig:
    return replace(config, kind=kind, **changes)
