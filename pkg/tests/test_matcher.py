import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from mhqa import autodiff as ad
from mhqa.autodiff import Parameter, Tensor
from mhqa.data import MentionAnnotation
from mhqa.encoders import EncodedSequence
from mhqa.matcher import (AttentionHead, AttentionParams, NoScorableCandidates, attention_scores,
                          candidate_distribution, combine_steps, extract_mention_rep, extract_question_rep,
                          merge_probabilities)


def fixture_encoding():
    # 4 positions, hidden size 2; entries are distinct so the concat order is visible
    fw = np.arange(8.0).reshape(4, 2)
    bw = 10.0 + np.arange(8.0).reshape(4, 2)
    return EncodedSequence(Tensor(fw), Tensor(bw))


def test_mention_rep_hand_concat():
    enc = fixture_encoding()
    W1 = Parameter(np.eye(8))
    b1 = Parameter(np.zeros(8))
    rep = extract_mention_rep(enc, MentionAnnotation(1, 3, "c"), W1, b1).data
    # [bw(1); fw(1); bw(3); fw(3)]
    np.testing.assert_array_equal(rep, [12, 13, 2, 3, 16, 17, 6, 7])
    single = extract_mention_rep(enc, MentionAnnotation(2, 2, "c"), W1, b1).data
    np.testing.assert_array_equal(single[:4], single[4:])


def test_zero_states_give_bias():
    enc = EncodedSequence(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 2))))
    rng = np.random.default_rng(0)
    W = Parameter(rng.normal(size=(8, 5)))
    b = Parameter(rng.normal(size=5))
    np.testing.assert_array_equal(extract_mention_rep(enc, MentionAnnotation(0, 1, "c"), W, b).data, b.data)
    np.testing.assert_array_equal(extract_question_rep(enc, W, b).data, b.data)


def test_question_rep_first_and_last():
    enc = fixture_encoding()
    rep = extract_question_rep(enc, Parameter(np.eye(8)), Parameter(np.zeros(8))).data
    np.testing.assert_array_equal(rep, [10, 11, 0, 1, 16, 17, 6, 7])
    one = EncodedSequence(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]))
    np.testing.assert_array_equal(extract_question_rep(one, Parameter(np.eye(8)), Parameter(np.zeros(8))).data,
                                  [3, 4, 1, 2, 3, 4, 1, 2])


def test_span_out_of_range():
    with pytest.raises(IndexError):
        extract_mention_rep(fixture_encoding(), MentionAnnotation(2, 4, "c"), Parameter(np.eye(8)),
                            Parameter(np.zeros(8)))


def test_empty_question():
    enc = EncodedSequence(Tensor(np.zeros((0, 2))), Tensor(np.zeros((0, 2))))
    with pytest.raises(ValueError, match="empty"):
        extract_question_rep(enc, Parameter(np.eye(8)), Parameter(np.zeros(8)))


def test_attention_zero_v_and_one_dim():
    rng = np.random.default_rng(1)
    head = AttentionHead.init(3, 3, 4, rng)
    head.v.data[...] = 0.0
    assert np.all(attention_scores(Tensor(rng.normal(size=(5, 3))), Tensor(rng.normal(size=3)), head).data == 0)
    one = AttentionHead(Parameter([1.0]), Parameter([[1.0]]), Parameter([[1.0]]), Parameter([0.3]))
    h = np.array([[0.2], [-1.0]])
    np.testing.assert_allclose(attention_scores(Tensor(h), Tensor([0.5]), one).data, np.tanh(h[:, 0] + 0.5 + 0.3))


def test_attention_is_per_mention():
    rng = np.random.default_rng(2)
    head = AttentionHead.init(3, 3, 4, rng)
    reps, q = rng.normal(size=(6, 3)), Tensor(rng.normal(size=3))
    perm = rng.permutation(6)
    np.testing.assert_array_equal(attention_scores(Tensor(reps), q, head).data[perm],
                                  attention_scores(Tensor(reps[perm]), q, head).data)


def test_combine_steps():
    scores = [Tensor([1.0, 2.0]), Tensor([10.0, 20.0]), Tensor([100.0, 200.0])]
    np.testing.assert_array_equal(combine_steps(scores, Tensor([1.0, 0, 0]), Tensor(0.0)).data, [1.0, 2.0])
    np.testing.assert_array_equal(combine_steps(scores, Tensor([1.0, 1, 1]), Tensor(0.0)).data, [111.0, 222.0])
    with pytest.raises(ad.ShapeError):
        combine_steps(scores, Tensor([1.0, 1.0]), Tensor(0.0))


def test_one_candidate_one_mention():
    assert candidate_distribution(np.array([0.3]), {0: 0}, 1).probs[0] == 1.0


def test_two_thirds_one_third():
    d = candidate_distribution(np.zeros(4), {0: 0, 1: 0, 3: 1}, 2)
    np.testing.assert_allclose(d.probs, [2 / 3, 1 / 3], atol=1e-15)
    assert d.argmax() == 0


def test_unlinked_mentions_excluded():
    d = candidate_distribution(np.array([0.0, 50.0, 0.0]), {0: 0, 2: 1}, 2)
    np.testing.assert_allclose(d.probs, [0.5, 0.5], atol=1e-15)


def test_no_scorable_candidates():
    with pytest.raises(NoScorableCandidates, match="no scorable candidates"):
        candidate_distribution(np.zeros(3), {}, 2)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12), st.floats(-100, 100), st.integers(0, 2**31))
@example([0.0, 3.0], 0.0, 55)  # both mentions on one candidate: the merged sum rounds past 1
def test_distribution_and_shift_invariance(scores, shift, seed):
    rng = np.random.default_rng(seed)
    x = np.array(scores)
    links = {k: int(rng.integers(0, 4)) for k in range(len(x))}
    d = candidate_distribution(x, links, 4)
    assert abs(d.probs.sum() - 1.0) < 1e-9 and np.all((d.probs >= 0) & (d.probs <= 1))
    moved = candidate_distribution(x + shift, links, 4)
    assert np.max(np.abs(d.probs - moved.probs)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.integers(0, 2**31))
def test_duplicate_mention_increases_probability(scores, seed):
    rng = np.random.default_rng(seed)
    x = np.array(scores)
    links = {k: int(rng.integers(0, 3)) for k in range(len(x))}
    k = int(rng.integers(0, len(x)))
    before = candidate_distribution(x, links, 3).probs[links[k]]
    dup = dict(links)
    dup[len(x)] = links[k]
    after = candidate_distribution(np.append(x, x[k]), dup, 3).probs[links[k]]
    if before < 1.0 - 1e-12:
        assert after > before
    else:
        assert abs(after - 1.0) < 1e-12


def test_batched_merge_matches_per_instance():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=7)
    segments = [0, 0, 0, 1, 1, 1, 1]
    groups = [0, 1, 0, 2, 3, 3, 4]  # candidates 0-1 belong to instance 0, 2-4 to instance 1
    merged = merge_probabilities(Tensor(scores), segments, groups, 2, 5).data
    a = candidate_distribution(scores[:3], {0: 0, 1: 1, 2: 0}, 2).probs
    b = candidate_distribution(scores[3:], {0: 0, 1: 1, 2: 1, 3: 2}, 3).probs
    np.testing.assert_allclose(merged, np.concatenate([a, b]), atol=1e-15)


def test_initial_combination_is_the_plain_sum():
    rng = np.random.default_rng(5)
    att = AttentionParams.init(3, 3, 3, 3, 4, rng)
    scores = [Tensor(rng.normal(size=6)) for _ in range(4)]
    np.testing.assert_allclose(combine_steps(scores, att.w_c, att.b_c).data, sum(s.data for s in scores),
                               atol=1e-14)


def test_gradient_reaches_every_head():
    rng = np.random.default_rng(4)
    att = AttentionParams.init(3, 3, 3, 3, 4, rng)
    reps = [Tensor(rng.normal(size=(5, 3))) for _ in range(4)]
    q = Tensor(rng.normal(size=3))

    def loss():
        e = combine_steps([attention_scores(r, q, h) for r, h in zip(reps, att.heads)], att.w_c, att.b_c)
        p = merge_probabilities(e, [0] * 5, [0, 1, 1, 2, 0], 1, 3)
        return ad.neg(ad.log(p[1]))

    # b_c shifts every score alike, so its gradient is exactly zero; the relative check would
    # only divide finite-difference roundoff by the 1e-8 floor
    params = [p for p in att.parameters() if p is not att.b_c]
    assert ad.grad_check(loss, params) < 1e-4
    att.b_c.zero_grad()
    with ad.Tape() as tape:
        out = loss()
    tape.backward(out)
    assert abs(float(att.b_c.grad)) < 1e-12
    for h in att.heads:
        assert all(np.any(p.grad != 0) for p in (h.v, h.W, h.U))
    assert len(att.heads) == 4 and att.steps == 3
