import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from u2asr.frontend import compute_fbank
from u2asr.model_store import Model
from fixtures import synth_utterance, tiny_model
from oracles import exhaustive_attention_best, reference_decoder_logprobs


def with_tensors(model, **updates):
    tensors = {k: np.array(v) for k, v in model.tensors.items()}
    for name, fn in updates.items():
        tensors[name.replace("__", ".")] = fn(tensors[name.replace("__", ".")])
    return Model(model.enc_cfg, model.dec_cfg, model.vocab_size, tensors)


def zero_decoder(model):
    tensors = {k: (np.zeros_like(v) if k.startswith("decoder.") else np.array(v)) for k, v in model.tensors.items()}
    return Model(model.enc_cfg, model.dec_cfg, model.vocab_size, tensors)


@pytest.fixture(scope="module")
def model():
    return tiny_model(2, vocab=4)


@pytest.fixture(scope="module")
def enc(model):
    return model.encoder.encode_full(compute_fbank(synth_utterance(102, 0.6)))


def test_zero_decoder_scores_uniformly():
    model = zero_decoder(tiny_model(0, vocab=3))
    enc = model.encoder.encode_full(compute_fbank(synth_utterance(1, 0.3)))
    assert model.decoder.score_teacher_forced(enc, [2]) == pytest.approx(2 * math.log(1 / 5), abs=1e-5)


@given(st.lists(st.integers(1, 4), max_size=5))
@settings(max_examples=20, deadline=None)
def test_teacher_forcing_equals_incremental_steps(y):
    model = tiny_model(2, vocab=4)
    enc = model.encoder.encode_full(compute_fbank(synth_utterance(102, 0.6)))
    memory = model.decoder.memory(enc)
    eos = sos = model.vocab_size + 1
    steps = sum(model.decoder.step_logprobs(memory, y[:i])[tok] for i, tok in enumerate(y + [eos]))
    oracle = sum(reference_decoder_logprobs(model, enc, [sos] + y[:i])[tok] for i, tok in enumerate(y + [eos]))
    score = model.decoder.score_teacher_forced(enc, y)
    assert abs(score - steps) <= 1e-5
    assert abs(score - oracle) <= 1e-5


@given(st.lists(st.integers(1, 4), min_size=2, max_size=6), st.data())
@settings(max_examples=25, deadline=None)
def test_future_tokens_do_not_leak(y, data):
    model = tiny_model(2, vocab=4)
    enc = model.encoder.encode_full(compute_fbank(synth_utterance(102, 0.6)))
    memory = model.decoder.memory(enc)
    sos = model.vocab_size + 1
    t = data.draw(st.integers(0, len(y) - 2))
    changed = list(y)
    changed[t + 1] = changed[t + 1] % 4 + 1
    a = model.decoder.forward(memory, [sos] + y)
    b = model.decoder.forward(memory, [sos] + changed)
    # rows 0..t+1 predict targets y_0..y_{t+1} and only see inputs up to y_t
    assert np.array_equal(a[: t + 2], b[: t + 2])
    assert not np.array_equal(a[t + 2], b[t + 2])


def test_cross_attention_is_live(model, enc):
    doubled = np.concatenate([enc, enc[::-1] * 0.5])
    assert model.decoder.score_teacher_forced(enc, [1, 2]) != model.decoder.score_teacher_forced(doubled, [1, 2])


def test_immediate_eos():
    base = tiny_model(0, vocab=3)
    model = with_tensors(base, decoder__out__bias=lambda b: np.where(np.arange(5) == 4, 50.0, 0.0).astype(np.float32))
    enc = model.encoder.encode_full(compute_fbank(synth_utterance(1, 0.3)))
    assert model.decoder.beam_search(enc, 1, 5)[0].tokens == []


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_exhaustive_beam_is_exact(seed):
    model = tiny_model(seed, vocab=2)
    enc = model.encoder.encode_full(compute_fbank(synth_utterance(200 + seed, 0.3)))
    tokens, score = exhaustive_attention_best(model, enc, max_len=2)
    best = model.decoder.beam_search(enc, beam=9, max_len=2)[0]
    assert best.tokens == tokens
    assert best.att_score == pytest.approx(score, abs=1e-5)


def test_results_sorted_and_bounded(model, enc):
    res = model.decoder.beam_search(enc, 4, 6)
    assert 1 <= len(res) <= 4
    assert [r.att_score for r in res] == sorted((r.att_score for r in res), reverse=True)
    for r in res:
        assert r.att_score == pytest.approx(model.decoder.score_teacher_forced(enc, r.tokens), abs=1e-4)


@pytest.mark.parametrize("k,k2", [(1, 2), (2, 4), (3, 8)])
def test_beam_trace_nesting(model, enc, k, k2):
    small, large = [], []
    model.decoder.beam_search(enc, k, 5, trace=small)
    model.decoder.beam_search(enc, k2, 5, trace=large)
    # the first expansion ranks the same candidate set, so the narrower beam is a subset
    assert set(small[0]) <= set(large[0])
    # every later survivor extends a survivor of the previous step by one token
    for prev, cur in zip(small, small[1:]):
        assert all(p[:-1] in prev for p in cur)
