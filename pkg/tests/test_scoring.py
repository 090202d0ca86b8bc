import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from u2asr.ctc import ctc_loss, ctc_prefix_beam_search
from u2asr.errors import EmptyReference, ZeroAudio
from u2asr.frontend import compute_fbank
from u2asr.scoring import ScoringConfig, attention_rescoring, cer, combined_loss, model_latency_ms, rescore, rtf
from fixtures import synth_utterance, tiny_model
from oracles import levenshtein


@pytest.fixture(scope="module")
def setup():
    model = tiny_model(1)
    enc = model.encoder.encode_full(compute_fbank(synth_utterance(101, 0.8)))
    return model, enc, model.ctc_posteriors(enc)


def test_loss_boundaries_and_mix(setup):
    model, enc, post = setup
    y = [3, 1, 4]
    a = ctc_loss(post, y)
    b = -model.decoder.score_teacher_forced(enc, y)
    assert combined_loss(post, enc, y, model.decoder, ScoringConfig(lam=1.0)) == a
    assert combined_loss(post, enc, y, model.decoder, ScoringConfig(lam=0.0)) == b
    assert combined_loss(post, enc, y, model.decoder, ScoringConfig(lam=0.3)) == pytest.approx(0.3 * a + 0.7 * b,
                                                                                               abs=1e-12)


@given(st.lists(st.integers(1, 10), min_size=1, max_size=5))
@settings(max_examples=15, deadline=None)
def test_loss_affine_in_lambda(y):
    model = tiny_model(1)
    enc = model.encoder.encode_full(compute_fbank(synth_utterance(101, 0.8)))
    post = model.ctc_posteriors(enc)
    f = lambda lam: combined_loss(post, enc, y, model.decoder, ScoringConfig(lam=lam))  # noqa: E731
    assert abs(f(0.5) - (f(0.0) + f(1.0)) / 2) <= 1e-9


def test_lambda_range_checked():
    with pytest.raises(ValueError):
        ScoringConfig(lam=1.5)


def test_beam_one_returns_ctc_best(setup):
    model, enc, post = setup
    top = ctc_prefix_beam_search(post, 1)[0]
    for w in (0.0, 0.5, 100.0):
        assert attention_rescoring(enc, post, model.decoder, ScoringConfig(beam=1, ctc_weight=w)).tokens == list(top.prefix)


def test_huge_ctc_weight_picks_ctc_best(setup):
    model, enc, post = setup
    hyps = ctc_prefix_beam_search(post, 6)
    assert len({h.score for h in hyps}) == len(hyps)
    chosen = attention_rescoring(enc, post, model.decoder, ScoringConfig(beam=6, ctc_weight=1e9))
    assert chosen.tokens == list(hyps[0].prefix)


def test_two_candidates_hand_combination(setup):
    model, enc, _ = setup
    cands = [((1, 2), -3.0), ((4,), -3.5)]
    att = {c: model.decoder.score_teacher_forced(enc, list(c)) for c, _ in cands}
    for w in (0.0, 0.5, 2.0, 10.0):
        expected = max(cands, key=lambda c: att[c[0]] + w * c[1])[0]
        best = rescore(cands, model.decoder, enc, w)[0]
        assert tuple(best.tokens) == expected
        assert best.combined == pytest.approx(best.att_score + w * best.ctc_score)


def test_rescoring_invariant_to_att_shift(setup, monkeypatch):
    model, enc, post = setup
    cfg = ScoringConfig(beam=5)
    before = attention_rescoring(enc, post, model.decoder, cfg).tokens
    original = type(model.decoder).score_teacher_forced
    monkeypatch.setattr(type(model.decoder), "score_teacher_forced",
                        lambda self, e, y, memory=None: original(self, e, y, memory) + 7.25)
    assert attention_rescoring(enc, post, model.decoder, cfg).tokens == before


def test_cer_examples():
    assert cer("abc", "abc") == 0.0
    assert cer("abc", "") == 1.0
    assert cer("abc", "axc") == pytest.approx(1 / 3)
    with pytest.raises(EmptyReference):
        cer("", "a")


@given(st.lists(st.integers(0, 3), min_size=1, max_size=7), st.lists(st.integers(0, 3), max_size=7))
def test_cer_matches_recursive_edit_distance(ref, hyp):
    assert cer(ref, hyp) == levenshtein(tuple(ref), tuple(hyp)) / len(ref)
    assert cer(ref, ref) == 0.0
    assert cer(ref, hyp) >= 0


def test_model_latency_table():
    assert [model_latency_ms(c) for c in (16, 8, 4)] == [380, 220, 140]
    values = [model_latency_ms(c) for c in range(1, 65)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_rtf():
    assert rtf(1.0, 10.0) == 0.1
    assert rtf(3.3, 3.3) == 1.0
    assert f"{rtf(0.79, 10.0):.3f}" == "0.079"
    with pytest.raises(ZeroAudio):
        rtf(1.0, 0.0)
