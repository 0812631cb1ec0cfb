"""Typed evidence graphs over mention nodes.

Edge rules, for mentions ``u != v``:

* ``SAME``   both entity mentions with equal normalized text, in different
  passages or more than ``tau_long`` tokens apart in one passage;
* ``COREF``  on the same chain, and at least one is a pronoun or their texts
  differ (aliases);
* ``WINDOW`` on different chains, same passage, at most ``tau_window`` apart.

Distances are between span starts.  Every qualifying pair gives one edge per
qualifying type in each direction.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

from .data import Dataset, Instance, link_candidates, normalize


class EdgeType(enum.Enum):
    SAME = "same"
    COREF = "coref"
    WINDOW = "window"

    @classmethod
    def parse(cls, spec: str) -> frozenset["EdgeType"]:
        """``"same,coref"`` -> {SAME, COREF}; ``"all"`` and ``"none"`` are accepted."""
        spec = spec.strip().lower()
        if spec in ("", "none"):
            return frozenset()
        if spec == "all":
            return ALL_EDGES
        return frozenset(cls(s.strip()) for s in spec.split(",") if s.strip())


ALL_EDGES = frozenset(EdgeType)
# neighbors of these types survive capping first
_PRIORITY = {EdgeType.SAME: 0, EdgeType.COREF: 0, EdgeType.WINDOW: 1}


@dataclass(frozen=True)
class GraphConfig:
    tau_long: int = 200
    tau_window: int = 20
    neighbor_cap: int = 200

    def __post_init__(self):
        if min(self.tau_long, self.tau_window, self.neighbor_cap) <= 0:
            raise ValueError("graph thresholds must be positive")
        if self.tau_window >= self.tau_long:
            raise ValueError(f"tau_window ({self.tau_window}) must be below tau_long ({self.tau_long})")


@dataclass
class EvidenceGraph:
    nodes: list[int]
    edges: list[tuple[int, int, EdgeType]]
    adjacency: list[list[int]] = field(default_factory=list)
    positions: list[int] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def edge_set(self) -> set[tuple[int, int, EdgeType]]:
        return set(self.edges)

    def count(self, kind: EdgeType) -> int:
        return sum(1 for e in self.edges if e[2] is kind)

    def filtered(self, kinds) -> "EvidenceGraph":
        """Copy with only the given edge types, adjacency rebuilt uncapped."""
        kinds = frozenset(kinds)
        edges = [e for e in self.edges if e[2] in kinds]
        return EvidenceGraph(list(self.nodes), edges, _adjacency(len(self.nodes), edges),
                             list(self.positions))


def edge_types_between(inst: Instance, u: int, v: int, config: GraphConfig) -> set[EdgeType]:
    """The rule predicates for one unordered pair; used by the builder and its tests."""
    a, b = inst.mentions[u], inst.mentions[v]
    same_passage = inst.mention_passage(u) == inst.mention_passage(v)
    dist = abs(a.span_start - b.span_start)
    same_text = normalize(inst.mention_text(u)) == normalize(inst.mention_text(v))
    types = set()
    if not a.is_pronoun and not b.is_pronoun and same_text and (not same_passage or dist > config.tau_long):
        types.add(EdgeType.SAME)
    if a.chain_id == b.chain_id and (a.is_pronoun or b.is_pronoun or not same_text):
        types.add(EdgeType.COREF)
    if a.chain_id != b.chain_id and same_passage and dist <= config.tau_window:
        types.add(EdgeType.WINDOW)
    return types


def build_graph(inst: Instance, config: GraphConfig = GraphConfig(), edge_types=ALL_EDGES,
                cap: bool = True) -> EvidenceGraph:
    """Evidence graph over all mentions of ``inst``.

    Pairs are bucketed so only candidate pairs are examined: SAME by text,
    COREF by chain, WINDOW by passage with a sorted sweep.
    """
    edge_types = frozenset(edge_types)
    n = len(inst.mentions)
    starts = [m.span_start for m in inst.mentions]
    passage = [inst.mention_passage(k) for k in range(n)]
    text = [normalize(inst.mention_text(k)) for k in range(n)]
    pairs: dict[tuple[int, int], set[EdgeType]] = {}

    def emit(u, v, t):
        if u != v:
            pairs.setdefault((min(u, v), max(u, v)), set()).add(t)

    if EdgeType.SAME in edge_types:
        by_text: dict[str, list[int]] = {}
        for k, m in enumerate(inst.mentions):
            if not m.is_pronoun:
                by_text.setdefault(text[k], []).append(k)
        for group in by_text.values():
            for i, u in enumerate(group):
                for v in group[i + 1:]:
                    if passage[u] != passage[v] or abs(starts[u] - starts[v]) > config.tau_long:
                        emit(u, v, EdgeType.SAME)

    if EdgeType.COREF in edge_types:
        by_chain: dict[str, list[int]] = {}
        for k, m in enumerate(inst.mentions):
            by_chain.setdefault(m.chain_id, []).append(k)
        for group in by_chain.values():
            for i, u in enumerate(group):
                for v in group[i + 1:]:
                    if inst.mentions[u].is_pronoun or inst.mentions[v].is_pronoun or text[u] != text[v]:
                        emit(u, v, EdgeType.COREF)

    if EdgeType.WINDOW in edge_types:
        order = sorted(range(n), key=lambda k: (passage[k], starts[k], k))
        for i, u in enumerate(order):
            for v in order[i + 1:]:
                if passage[v] != passage[u] or starts[v] - starts[u] > config.tau_window:
                    break
                if inst.mentions[u].chain_id != inst.mentions[v].chain_id:
                    emit(u, v, EdgeType.WINDOW)

    edges = []
    for (u, v), types in sorted(pairs.items()):
        for t in sorted(types, key=lambda t: t.value):
            edges.append((u, v, t))
            edges.append((v, u, t))
    edges.sort(key=lambda e: (e[0], e[1], e[2].value))
    graph = EvidenceGraph(list(range(n)), edges, _adjacency(n, edges), starts)
    return cap_neighbors(graph, config) if cap else graph


def _adjacency(n: int, edges) -> list[list[int]]:
    adj: list[set[int]] = [set() for _ in range(n)]
    for u, v, _ in edges:
        adj[u].add(v)
    return [sorted(a) for a in adj]


def cap_neighbors(graph: EvidenceGraph, config: GraphConfig = GraphConfig()) -> EvidenceGraph:
    """Keep at most ``neighbor_cap`` neighbors per node.

    SAME/COREF neighbors go first, then WINDOW; within a class nearer tokens
    first, ties by node index.
    """
    best: dict[tuple[int, int], int] = {}
    for u, v, t in graph.edges:
        best[(u, v)] = min(best.get((u, v), 9), _PRIORITY[t])
    pos = graph.positions
    adjacency = []
    for u, neigh in enumerate(graph.adjacency):
        ranked = sorted(neigh, key=lambda v: (best.get((u, v), 9), abs(pos[u] - pos[v]), v))
        adjacency.append(ranked[:config.neighbor_cap])
    return EvidenceGraph(list(graph.nodes), list(graph.edges), adjacency, list(pos))


def question_answer_distance(graph: EvidenceGraph, inst: Instance) -> float:
    """Hop count from the question subject's mentions to the nearest answer mention.

    Edges are treated as untyped and undirected.  ``math.inf`` when either
    endpoint set is empty or no path exists.
    """
    sources = [k for k in graph.nodes if inst.mentions[k].chain_id == inst.subject_chain_id]
    targets = {k for k, c in link_candidates(inst).items() if c == inst.answer_index}
    if not sources or not targets:
        return math.inf
    neigh: dict[int, set[int]] = {k: set() for k in graph.nodes}
    for u, v, _ in graph.edges:
        neigh[u].add(v)
        neigh[v].add(u)
    dist = {s: 0 for s in sources}
    queue = deque(sources)
    while queue:
        u = queue.popleft()
        if u in targets:
            return dist[u]
        for v in sorted(neigh[u]):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return math.inf


def distance_histogram(dataset: Dataset, config: GraphConfig = GraphConfig(),
                       edge_filter=ALL_EDGES) -> dict[float, float]:
    """Fraction of instances at each question-answer hop distance (``math.inf`` bucket included)."""
    counts: dict[float, int] = {}
    for inst in dataset:
        d = question_answer_distance(build_graph(inst, config, edge_filter, cap=False), inst)
        counts[d] = counts.get(d, 0) + 1
    total = sum(counts.values())
    return {d: c / total for d, c in sorted(counts.items())}
