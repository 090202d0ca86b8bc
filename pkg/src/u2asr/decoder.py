"""Attention decoder: teacher-forced scoring and autoregressive beam search.

Output classes are ``0 .. V+1``: slot 0 mirrors the CTC blank and is never
emitted, 1..V are labels and ``V+1`` is shared by <sos> and <eos>.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctc import sort_key
from .errors import ShapeMismatch
from .nn import FeedForward, LayerNorm, LinearLayer, MultiHeadAttention, log_softmax_rows, positional_encoding


@dataclass
class DecoderConfig:
    num_layers: int = 1
    d_model: int = 16
    heads: int = 2
    d_ffn: int = 64

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")


@dataclass
class ScoredCandidate:
    tokens: list[int]
    att_score: float
    ctc_score: float = 0.0
    combined: float = 0.0


@dataclass
class DecoderLayer:
    norm1: LayerNorm
    self_attn: MultiHeadAttention
    norm2: LayerNorm
    src_attn: MultiHeadAttention
    norm3: LayerNorm
    ffn: FeedForward

    def __call__(self, x, self_mask, memory_kv):
        xn = self.norm1(x)
        x = x + self.self_attn(xn, xn, self_mask)
        x = x + self.src_attn.attend(self.norm2(x), *memory_kv, None)
        return x + self.ffn(self.norm3(x))


class AttentionDecoder:
    def __init__(self, cfg: DecoderConfig, vocab_size: int, embed: np.ndarray,
                 layers: list[DecoderLayer], final_norm: LayerNorm, out: LinearLayer):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.sos = self.eos = vocab_size + 1
        if embed.shape != (vocab_size + 2, cfg.d_model) or out.out_features != vocab_size + 2:
            raise ShapeMismatch("decoder embedding/output must cover V + 2 classes")
        self.embed = embed
        self.layers = layers
        self.final_norm = final_norm
        self.out = out

    def memory(self, encoder_out: np.ndarray):
        """Cross-attention keys/values per layer; compute once per utterance."""
        if encoder_out.ndim != 2 or encoder_out.shape[1] != self.cfg.d_model:
            raise ShapeMismatch(f"encoder output {encoder_out.shape} vs d_model {self.cfg.d_model}")
        return [layer.src_attn.project_kv(encoder_out) for layer in self.layers]

    def forward(self, memory, tokens) -> np.ndarray:
        """Log-probabilities ``(len(tokens), V + 2)`` under a causal self-attention mask."""
        tokens = np.asarray(tokens, dtype=np.int64)
        n = tokens.shape[0]
        x = self.embed[tokens] + positional_encoding(n, self.cfg.d_model)
        causal = np.tril(np.ones((n, n), dtype=bool))
        for layer, kv in zip(self.layers, memory):
            x = layer(x, causal, kv)
        return log_softmax_rows(self.out(self.final_norm(x)))

    def _check_labels(self, y):
        if any(t < 1 or t > self.vocab_size for t in y):
            raise ValueError(f"labels must lie in [1, {self.vocab_size}]")

    def score_teacher_forced(self, encoder_out: np.ndarray, y, memory=None) -> float:
        """Sum of log P(target) over targets ``y + [eos]`` given inputs ``[sos] + y``."""
        y = [int(t) for t in y]
        self._check_labels(y)
        memory = memory if memory is not None else self.memory(encoder_out)
        logp = self.forward(memory, [self.sos] + y)
        targets = y + [self.eos]
        return float(np.sum(logp[np.arange(len(targets)), targets], dtype=np.float64))

    def step_logprobs(self, memory, prefix) -> np.ndarray:
        """Next-token log-probabilities after ``[sos] + prefix``."""
        return self.forward(memory, [self.sos] + list(prefix))[-1]

    def beam_search(self, encoder_out: np.ndarray, beam: int, max_len: int,
                    trace: list | None = None) -> list[ScoredCandidate]:
        """Length-synchronous beam search from <sos>.

        Each step expands every live hypothesis by all labels and <eos>, keeps
        the ``beam`` best expansions, and moves those ending in <eos> to the
        finished list. After ``max_len`` labels <eos> is forced. Scores are
        plain sums of log-probabilities (no length normalisation).
        """
        if beam < 1 or max_len < 1:
            raise ValueError("beam and max_len must be >= 1")
        memory = self.memory(encoder_out)
        live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
        finished: list[tuple[tuple[int, ...], float]] = []
        for step in range(max_len + 1):
            expansions = []
            for prefix, score in live:
                logp = self.step_logprobs(memory, prefix).astype(np.float64)
                expansions.append((prefix, score + float(logp[self.eos]), True))
                if step < max_len:
                    for tok in range(1, self.vocab_size + 1):
                        expansions.append((prefix + (tok,), score + float(logp[tok]), False))
            expansions.sort(key=lambda e: (sort_key(e[0], e[1]), e[2]))
            live = []
            for prefix, score, ended in expansions[:beam]:
                (finished if ended else live).append((prefix, score))
            if trace is not None:
                trace.append([p for p, _ in live])
            if not live:
                break
            best_done = max((s for _, s in finished), default=None)
            # log-probs only decrease, so no live hypothesis can overtake
            if best_done is not None and best_done >= max(s for _, s in live):
                break
        finished.sort(key=lambda e: sort_key(e[0], e[1]))
        return [ScoredCandidate(list(p), s, 0.0, s) for p, s in finished[:beam]]
