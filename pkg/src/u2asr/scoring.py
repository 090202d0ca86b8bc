"""Joint CTC/attention loss, attention rescoring, CER, model latency and RTF."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .ctc import ctc_loss, ctc_prefix_beam_search, sort_key
from .decoder import AttentionDecoder, ScoredCandidate
from .encoder import LOOKAHEAD_FRAMES, SUBSAMPLE_RATE
from .errors import EmptyReference, ZeroAudio
from .frontend import FRAME_SHIFT_MS


@dataclass
class ScoringConfig:
    lam: float = 0.3  # CTC weight in the joint loss
    ctc_weight: float = 0.5  # CTC weight when rescoring
    beam: int = 10

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.ctc_weight < 0:
            raise ValueError("ctc_weight must be >= 0")
        if self.beam < 1:
            raise ValueError("beam must be >= 1")


@dataclass
class LatencyReport:
    L1_ms: float
    L2_ms: float
    L3_ms: float
    rtf: float

    def to_dict(self) -> dict:
        return asdict(self)


def combined_loss(post: np.ndarray, encoder_out: np.ndarray, y, decoder: AttentionDecoder,
                  cfg: ScoringConfig) -> float:
    """``lam * L_ctc + (1 - lam) * L_att`` with ``L_att`` the negative teacher-forced score."""
    ctc_part = ctc_loss(post, y)
    att_part = -decoder.score_teacher_forced(encoder_out, y)
    return cfg.lam * ctc_part + (1.0 - cfg.lam) * att_part


def rescore(candidates, decoder: AttentionDecoder, encoder_out: np.ndarray,
            ctc_weight: float) -> list[ScoredCandidate]:
    """Score (tokens, ctc_score) pairs with the decoder; best combined score first."""
    memory = decoder.memory(encoder_out)
    scored = []
    for tokens, ctc_score in candidates:
        att = decoder.score_teacher_forced(encoder_out, tokens, memory=memory)
        scored.append(ScoredCandidate(list(tokens), att, ctc_score, att + ctc_weight * ctc_score))
    scored.sort(key=lambda c: sort_key(tuple(c.tokens), c.combined))
    return scored


def attention_rescoring(encoder_out: np.ndarray, post: np.ndarray, decoder: AttentionDecoder,
                        cfg: ScoringConfig, hyps=None) -> ScoredCandidate:
    """CTC prefix beam search n-best, re-ranked by ``att + ctc_weight * ctc``.

    ``hyps`` may carry an n-best list already produced by a streaming search.
    """
    if hyps is None:
        hyps = ctc_prefix_beam_search(post, cfg.beam)
    if encoder_out.shape[0] == 0:
        return ScoredCandidate([], 0.0, 0.0, 0.0)
    return rescore([(h.prefix, h.score) for h in hyps], decoder, encoder_out, cfg.ctc_weight)[0]


def edit_distance(ref, hyp) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i]
        for j, h in enumerate(hyp, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h)))
        prev = cur
    return prev[-1]


def cer(ref, hyp) -> float:
    if len(ref) == 0:
        raise EmptyReference("CER is undefined for an empty reference")
    return edit_distance(ref, hyp) / len(ref)


def model_latency_ms(chunk_size: int, subsample_rate: int = SUBSAMPLE_RATE,
                     lookahead: int = LOOKAHEAD_FRAMES, frame_shift_ms: float = FRAME_SHIFT_MS) -> float:
    """Average structural wait of chunked decoding: half a chunk plus the conv lookahead."""
    if chunk_size < 1:
        raise ValueError("chunk size must be >= 1")
    return (chunk_size / 2 * subsample_rate + lookahead) * frame_shift_ms


def rtf(processing_seconds: float, audio_seconds: float) -> float:
    if audio_seconds <= 0:
        raise ZeroAudio("RTF needs a positive audio duration")
    return processing_seconds / audio_seconds
