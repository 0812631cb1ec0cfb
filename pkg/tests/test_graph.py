import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhqa.data import Dataset, instance_from_record
from mhqa.graph import (ALL_EDGES, EdgeType, EvidenceGraph, GraphConfig, build_graph, cap_neighbors,
                        distance_histogram, edge_types_between, question_answer_distance)
from mhqa.synth import GenConfig, generate

from conftest import gardens_record, random_instance

SAME, COREF, WINDOW = EdgeType.SAME, EdgeType.COREF, EdgeType.WINDOW


def oracle_edges(inst, cfg):
    """All ordered pairs checked directly against the three rules."""
    bounds = list(inst.passages.passage_boundaries)

    def passage(tok):
        return max(i for i, b in enumerate(bounds) if b <= tok)

    def text(m):
        return " ".join(" ".join(inst.passages.tokens[m.span_start:m.span_end + 1]).split()).casefold()

    edges = set()
    for u, a in enumerate(inst.mentions):
        for v, b in enumerate(inst.mentions):
            if u == v:
                continue
            same_p = passage(a.span_start) == passage(b.span_start)
            d = abs(a.span_start - b.span_start)
            if a.kind == b.kind == "entity" and text(a) == text(b) and (not same_p or d > cfg.tau_long):
                edges.add((u, v, SAME))
            if a.chain_id == b.chain_id and ("pronoun" in (a.kind, b.kind) or text(a) != text(b)):
                edges.add((u, v, COREF))
            if a.chain_id != b.chain_id and same_p and d <= cfg.tau_window:
                edges.add((u, v, WINDOW))
    return edges


def test_gardens_edges(gardens):
    g = build_graph(gardens)
    E = g.edge_set()
    assert (1, 4, SAME) in E and (4, 1, SAME) in E       # Mumbai <-> Mumbai across passages
    assert (0, 1, WINDOW) in E                           # The Hanging Gardens <-> Mumbai
    assert (5, 4, COREF) in E and (5, 1, COREF) in E     # It <-> Mumbai
    assert (0, 2, COREF) in E                            # The Hanging Gardens <-> They
    assert (3, 7, SAME) in E                             # Arabian Sea across passages


def test_single_mention_graph():
    rec = gardens_record()
    rec["mentions"] = rec["mentions"][:1]
    g = build_graph(instance_from_record(rec))
    assert g.num_nodes == 1 and g.edges == [] and g.adjacency == [[]]


@pytest.mark.parametrize("seed", range(10))
def test_matches_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    cfg = GraphConfig(tau_long=25, tau_window=6)
    inst = random_instance(rng)
    assert build_graph(inst, cfg).edge_set() == oracle_edges(inst, cfg)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_symmetry_and_soundness(seed):
    rng = np.random.default_rng(seed)
    cfg = GraphConfig(tau_long=20, tau_window=5)
    inst = random_instance(rng)
    g = build_graph(inst, cfg, cap=False)
    E = g.edge_set()
    assert len(E) == len(g.edges)
    for u, v, t in E:
        assert (v, u, t) in E
        assert u != v
        assert t in edge_types_between(inst, u, v, cfg)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.integers(1, 8))
def test_threshold_monotonicity(seed, w, extra):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    lo = build_graph(inst, GraphConfig(tau_long=30, tau_window=w), cap=False).edge_set()
    hi = build_graph(inst, GraphConfig(tau_long=30, tau_window=w + extra), cap=False).edge_set()
    assert {e for e in lo if e[2] is WINDOW} <= {e for e in hi if e[2] is WINDOW}
    near = build_graph(inst, GraphConfig(tau_long=10, tau_window=5), cap=False)
    far = build_graph(inst, GraphConfig(tau_long=10 + 5 * extra, tau_window=5), cap=False)
    def same_within(g):
        return {(u, v) for u, v, t in g.edges if t is SAME and inst.mention_passage(u) == inst.mention_passage(v)}
    assert same_within(far) <= same_within(near)


def star_graph():
    # node 0 at position 0; Window neighbors 1..5 at 1..5, Same neighbors 6, 7 far away
    edges = []
    for v in range(1, 6):
        edges += [(0, v, WINDOW), (v, 0, WINDOW)]
    for v in (6, 7):
        edges += [(0, v, SAME), (v, 0, SAME)]
    adjacency = [[1, 2, 3, 4, 5, 6, 7]] + [[0]] * 7
    return EvidenceGraph(list(range(8)), edges, adjacency, [0, 3, 1, 5, 2, 4, 90, 80])


def test_cap_prefers_same_then_nearest_window():
    g = cap_neighbors(star_graph(), GraphConfig(tau_long=50, tau_window=10, neighbor_cap=4))
    # Same neighbors 7 (distance 80) then 6 (90); nearest Window are 2 (1) and 4 (2)
    assert g.adjacency[0] == [7, 6, 2, 4]
    assert all(len(a) <= 4 for a in g.adjacency)


def test_cap_under_limit_and_idempotent():
    cfg = GraphConfig(tau_long=50, tau_window=10, neighbor_cap=200)
    g = cap_neighbors(star_graph(), cfg)
    assert sorted(g.adjacency[0]) == list(range(1, 8))
    small = GraphConfig(tau_long=50, tau_window=10, neighbor_cap=3)
    once = cap_neighbors(star_graph(), small)
    assert cap_neighbors(once, small).adjacency == once.adjacency


def test_distance_adjacent():
    rec = gardens_record()
    rec["subject_chain"] = "sea"
    rec["answer"] = 2  # Pakistan, 15 tokens from the second "Arabian Sea"
    inst = instance_from_record(rec)
    assert question_answer_distance(build_graph(inst), inst) == 1


def test_figure2_distance(gardens):
    assert question_answer_distance(build_graph(gardens), gardens) <= 3


def test_coref_only_cannot_reach_answer(gardens):
    g = build_graph(gardens, edge_types={COREF})
    assert question_answer_distance(g, gardens) == math.inf


def test_distance_empty_endpoints(gardens):
    rec = gardens_record()
    rec["subject_chain"] = "nobody"
    inst = instance_from_record(rec)
    assert question_answer_distance(build_graph(inst), inst) == math.inf


def test_histogram_single_instance():
    rec = gardens_record()
    rec["subject_chain"] = "mumbai"
    inst = instance_from_record(rec)
    d = question_answer_distance(build_graph(inst), inst)
    assert distance_histogram(Dataset((inst,))) == {d: 1.0}


def test_histogram_and_dominance_on_synthetic():
    ds = generate(GenConfig(seed=11, num_instances=40, hops=2))
    full = distance_histogram(ds)
    coref = distance_histogram(ds, edge_filter={COREF})
    assert abs(sum(full.values()) - 1) < 1e-12 and abs(sum(coref.values()) - 1) < 1e-12
    assert full == {3: 1.0}  # generator's designed hop distance for 2 hops
    assert coref.get(math.inf, 0) > full.get(math.inf, 0)
    for inst in ds:
        d_full = question_answer_distance(build_graph(inst, cap=False), inst)
        for kinds in ({COREF}, {SAME, COREF}, {WINDOW}, {SAME, WINDOW}):
            assert d_full <= question_answer_distance(build_graph(inst, edge_types=kinds, cap=False), inst)


def test_edge_type_parse():
    assert EdgeType.parse("same,coref") == {SAME, COREF}
    assert EdgeType.parse("all") == ALL_EDGES
    assert EdgeType.parse("none") == frozenset()


def test_config_invariants():
    with pytest.raises(ValueError):
        GraphConfig(tau_long=10, tau_window=20)
    with pytest.raises(ValueError):
        GraphConfig(neighbor_cap=0)
