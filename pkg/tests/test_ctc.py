import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from u2asr.ctc import (
    CtcPrefixBeamSearch,
    ctc_greedy_search,
    ctc_loss,
    ctc_posteriors,
    ctc_prefix_beam_search,
)
from u2asr.errors import InfeasibleLength, ShapeMismatch
from u2asr.nn import LinearLayer
from oracles import brute_force_prefix_probs, random_log_posteriors

A, B, C = 1, 2, 3


def onehot_path(path, n_classes=4, p=0.97):
    rows = np.full((len(path), n_classes), (1 - p) / (n_classes - 1))
    rows[np.arange(len(path)), path] = p
    return np.log(rows)


def test_posteriors():
    proj = LinearLayer(np.zeros((5, 4), np.float32), np.zeros(5, np.float32))
    post = ctc_posteriors(np.zeros((3, 4), np.float32), proj)
    np.testing.assert_allclose(post, np.log(1 / 5), rtol=1e-6)
    bias = np.zeros(5, np.float32)
    bias[3] = 20
    rng = np.random.default_rng(0)
    proj = LinearLayer(rng.normal(size=(5, 4)).astype(np.float32), bias)
    post = ctc_posteriors(rng.normal(size=(1, 4)).astype(np.float32), proj)
    assert post.argmax() == 3
    with pytest.raises(ShapeMismatch):
        ctc_posteriors(np.zeros((2, 3), np.float32), proj)


@given(st.integers(0, 10_000))
@settings(max_examples=30)
def test_posteriors_normalised(seed):
    rng = np.random.default_rng(seed)
    proj = LinearLayer(rng.normal(size=(6, 8)).astype(np.float32) * 5, rng.normal(size=6).astype(np.float32))
    post = ctc_posteriors(rng.normal(size=(7, 8)).astype(np.float32), proj)
    lse = np.log(np.exp(post.astype(np.float64)).sum(axis=1))
    assert np.abs(lse).max() <= 1e-5


def test_loss_single_frame():
    post = np.log(np.array([[0.1, 0.6, 0.3]]))
    assert ctc_loss(post, [A]) == pytest.approx(-math.log(0.6), abs=1e-12)


def test_loss_two_frames_matches_enumeration():
    p = np.array([[0.2, 0.5, 0.3], [0.4, 0.35, 0.25]])
    expected = p[0, 1] * p[1, 1] + p[0, 1] * p[1, 0] + p[0, 0] * p[1, 1]
    assert ctc_loss(np.log(p), [A]) == pytest.approx(-math.log(expected), rel=1e-12)


def test_loss_needs_blank_between_repeats():
    with pytest.raises(InfeasibleLength):
        ctc_loss(np.log(np.full((2, 3), 1 / 3)), [A, A])
    with pytest.raises(InfeasibleLength):
        ctc_loss(np.log(np.full((1, 3), 1 / 3)), [A, B])


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_loss_equals_alignment_sum(seed, t_len, vocab):
    rng = np.random.default_rng(seed)
    post = random_log_posteriors(rng, t_len, vocab + 1)
    table = brute_force_prefix_probs(post)
    for labels, prob in table.items():
        assert math.exp(-ctc_loss(post, labels)) == pytest.approx(prob, rel=1e-6)


def test_greedy_examples():
    assert ctc_greedy_search(onehot_path([0, 0, 0])) == []
    assert ctc_greedy_search(onehot_path([A, A, 0, A])) == [A, A]
    assert ctc_greedy_search(onehot_path([A, B, B, 0, C])) == [A, B, C]


def test_beam_single_frame_blank_dominant():
    post = np.log(np.array([[0.9, 0.05, 0.05]]))
    top = ctc_prefix_beam_search(post, 3)[0]
    assert top.prefix == () and top.score == pytest.approx(math.log(0.9), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_unbounded_beam_is_exact(seed, t_len, vocab):
    rng = np.random.default_rng(seed)
    post = random_log_posteriors(rng, t_len, vocab + 1)
    table = brute_force_prefix_probs(post)
    hyps = ctc_prefix_beam_search(post, beam=len(table) + 5)
    assert {h.prefix for h in hyps} == set(table)
    for h in hyps:
        assert abs(h.score - math.log(table[h.prefix])) <= 1e-9
    assert sum(math.exp(h.score) for h in hyps) <= 1 + 1e-6
    scores = [h.score for h in hyps]
    assert scores == sorted(scores, reverse=True)


def test_hypothesis_score_is_logsumexp():
    rng = np.random.default_rng(4)
    for h in ctc_prefix_beam_search(random_log_posteriors(rng, 6, 4), 5):
        assert h.score == pytest.approx(np.logaddexp(h.log_p_blank, h.log_p_nonblank), abs=1e-12)
        assert all(1 <= t <= 3 for t in h.prefix)


@given(st.integers(0, 10_000))
@settings(max_examples=30)
def test_beam_one_dominates_greedy_path(seed):
    rng = np.random.default_rng(seed)
    post = random_log_posteriors(rng, 6, 4)
    greedy_path_logp = post.max(axis=1).sum()
    assert ctc_prefix_beam_search(post, 1)[0].score >= greedy_path_logp - 1e-12


@given(st.integers(0, 10_000), st.integers(1, 8))
@settings(max_examples=30)
def test_greedy_equals_beam_one_when_paths_are_confident(seed, t_len):
    rng = np.random.default_rng(seed)
    path = rng.integers(0, 4, size=t_len)
    post = onehot_path(list(path), p=0.9)
    assert ctc_greedy_search(post) == list(ctc_prefix_beam_search(post, 1)[0].prefix)


@given(st.integers(0, 10_000), st.lists(st.integers(1, 4), min_size=1, max_size=5))
@settings(max_examples=30)
def test_streaming_search_matches_one_pass(seed, pieces):
    rng = np.random.default_rng(seed)
    post = random_log_posteriors(rng, 12, 5)
    search = CtcPrefixBeamSearch(4)
    pos = 0
    while pos < 12:
        for n in pieces:
            search.advance(post[pos:pos + n])
            pos += n
    one = ctc_prefix_beam_search(post, 4)
    assert [(h.prefix, h.score) for h in search.hypotheses()] == [(h.prefix, h.score) for h in one]


def test_tie_break_shorter_then_lexicographic():
    # two frames, blank and both labels equally likely
    post = np.log(np.full((1, 3), 1 / 3))
    hyps = ctc_prefix_beam_search(post, 3)
    assert [h.prefix for h in hyps] == [(), (1,), (2,)]
