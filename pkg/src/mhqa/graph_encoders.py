"""Graph recurrent (GRN) and graph convolutional (GCN) evidence integration.

Node states start from an affine map of ``[mention rep; question rep]`` and are
then updated synchronously for T steps from the summed states of each node's
(capped) neighbors.  Several graphs can be encoded at once by stacking their
nodes and using a block-diagonal neighbor matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .graph import EvidenceGraph

GRN, GCN = "grn", "gcn"


@dataclass(frozen=True)
class GraphEncoderConfig:
    steps: int = 3
    encoder_kind: str = GRN
    candidate: str = "sigmoid"  # activation of the GRN candidate update
    self_loop: bool = False
    shared_steps: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.encoder_kind not in (GRN, GCN):
            raise ValueError(f"unknown graph encoder {self.encoder_kind!r}")


@dataclass
class GraphState:
    s: Tensor
    c: Tensor | None
    step: int


@dataclass
class GraphParams:
    """``W3``/``b3`` initialize states; ``W``/``b`` hold one transition per
    step (a single shared entry unless ``shared_steps`` is off).

    GRN transitions are (H, 4H) with gate columns (i, o, f, u); GCN
    transitions are (H, H).
    """

    W3: Parameter
    b3: Parameter
    W: list[Parameter] = field(default_factory=list)
    b: list[Parameter] = field(default_factory=list)

    @classmethod
    def init(cls, d_mention: int, d_question: int, hidden: int, config: GraphEncoderConfig, rng,
             name: str = "graph"):
        d_in = d_mention + d_question
        s = 1.0 / np.sqrt(d_in)
        width = 4 * hidden if config.encoder_kind == GRN else hidden
        n = 1 if config.shared_steps else max(config.steps, 1)
        sh = 1.0 / np.sqrt(hidden)
        return cls(
            Parameter(rng.uniform(-s, s, (d_in, hidden)), f"{name}.W3"),
            Parameter(np.zeros(hidden), f"{name}.b3"),
            [Parameter(rng.uniform(-sh, sh, (hidden, width)), f"{name}.W{t}") for t in range(n)],
            [Parameter(np.zeros(width), f"{name}.b{t}") for t in range(n)],
        )

    def transition(self, t: int) -> tuple[Parameter, Parameter]:
        """Weights for step ``t`` (1-based)."""
        k = 0 if len(self.W) == 1 else t - 1
        return self.W[k], self.b[k]

    def parameters(self) -> list[Parameter]:
        return [self.W3, self.b3, *self.W, *self.b]


def neighbor_matrix(graphs: Sequence[EvidenceGraph] | EvidenceGraph, self_loop: bool = False) -> np.ndarray:
    """Block-diagonal 0/1 matrix with ``A[k, i] = 1`` iff i is in k's capped adjacency."""
    if isinstance(graphs, EvidenceGraph):
        graphs = [graphs]
    n = sum(g.num_nodes for g in graphs)
    A = np.zeros((n, n))
    off = 0
    for g in graphs:
        for k, neigh in enumerate(g.adjacency):
            A[off + k, [off + i for i in neigh]] = 1.0
        if self_loop:
            idx = np.arange(off, off + g.num_nodes)
            A[idx, idx] = 1.0
        off += g.num_nodes
    return A


def init_states(mention_reps: Tensor, question_rep: Tensor, params: GraphParams,
                encoder_kind: str = GRN) -> GraphState:
    """``s_0 = [h_mention; h_question] @ W3 + b3``.  ``question_rep`` is either
    one vector or one row per node."""
    n = mention_reps.shape[0]
    if question_rep.ndim == 1:
        question_rep = ad.take_rows(ad.reshape(question_rep, (1, -1)), np.zeros(n, dtype=np.int64))
    if question_rep.shape[0] != n:
        raise ad.ShapeError(f"{n} mention rows but question rep of shape {question_rep.shape}")
    x = ad.concat([mention_reps, question_rep], axis=1)
    if x.shape[1] != params.W3.shape[0]:
        raise ad.ShapeError(f"state init input {x.shape} does not match W3 {params.W3.shape}")
    s = x @ params.W3 + params.b3
    c = Tensor(np.zeros(s.shape)) if encoder_kind == GRN else None
    return GraphState(s, c, 0)


def message(state: GraphState, A: np.ndarray) -> Tensor:
    """Sum of neighbor states for every node (zero for isolated nodes)."""
    return ad.matmul(Tensor(A), state.s)


def grn_step(state: GraphState, A: np.ndarray, params: GraphParams, candidate: str = "sigmoid") -> GraphState:
    t = state.step + 1
    W, b = params.transition(t)
    m = message(state, A)
    s, c = ad.lstm_cell(m @ W + b, state.c, candidate)
    return GraphState(s, c, t)


def gcn_step(state: GraphState, A: np.ndarray, params: GraphParams) -> GraphState:
    t = state.step + 1
    W, b = params.transition(t)
    return GraphState(ad.sigmoid(message(state, A) @ W + b), None, t)


def run(graphs, mention_reps: Tensor, question_rep: Tensor, config: GraphEncoderConfig,
        params: GraphParams) -> list[GraphState]:
    """States for steps 0..T.  ``graphs`` is one graph, a list of graphs whose
    nodes are stacked in order, or a precomputed neighbor matrix."""
    A = graphs if isinstance(graphs, np.ndarray) else neighbor_matrix(graphs, config.self_loop)
    states = [init_states(mention_reps, question_rep, params, config.encoder_kind)]
    for _ in range(config.steps):
        if config.encoder_kind == GRN:
            states.append(grn_step(states[-1], A, params, config.candidate))
        else:
            states.append(gcn_step(states[-1], A, params))
    return states
