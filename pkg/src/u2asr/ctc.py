"""CTC head: posteriors, forward-algorithm loss, greedy and prefix beam search.

Blank is id 0; labels are 1..V. Log-space arithmetic uses ``NEG_INF``
(a large negative sentinel) instead of -inf so logsumexp never sees NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleLength, ShapeMismatch
from .nn import LinearLayer, log_softmax_rows

BLANK = 0
NEG_INF = -1e30


def log_add(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b <= NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


@dataclass
class Hypothesis:
    prefix: tuple[int, ...]
    log_p_blank: float
    log_p_nonblank: float

    @property
    def score(self) -> float:
        return log_add(self.log_p_blank, self.log_p_nonblank)


def sort_key(prefix: tuple[int, ...], score: float):
    """Best first; ties go to the shorter, then lexicographically smaller prefix."""
    return (-score, len(prefix), prefix)


def ctc_posteriors(encoder_out: np.ndarray, proj: LinearLayer) -> np.ndarray:
    """Per-frame log-softmax over ``V + 1`` classes."""
    if encoder_out.ndim != 2 or encoder_out.shape[1] != proj.in_features:
        raise ShapeMismatch(f"encoder output {encoder_out.shape} vs projection input {proj.in_features}")
    return log_softmax_rows(proj(encoder_out))


def min_frames_for(labels) -> int:
    """Shortest alignment length for ``labels`` (repeats need a blank in between)."""
    labels = list(labels)
    return len(labels) + sum(1 for a, b in zip(labels, labels[1:]) if a == b)


def ctc_loss(post: np.ndarray, labels) -> float:
    """Negative log-likelihood of ``labels`` under per-frame log-posteriors ``post``."""
    labels = [int(y) for y in labels]
    n_frames, n_classes = post.shape
    if any(y < 1 or y >= n_classes for y in labels):
        raise ValueError(f"labels must lie in [1, {n_classes - 1}]")
    if min_frames_for(labels) > n_frames:
        raise InfeasibleLength(f"{len(labels)} labels need {min_frames_for(labels)} frames, have {n_frames}")
    ext = [BLANK]
    for y in labels:
        ext += [y, BLANK]
    s_len = len(ext)
    lp = post.astype(np.float64)
    alpha = np.full(s_len, NEG_INF)
    alpha[0] = lp[0, BLANK]
    if s_len > 1:
        alpha[1] = lp[0, ext[1]]
    for t in range(1, n_frames):
        prev = alpha
        alpha = np.full(s_len, NEG_INF)
        for s in range(s_len):
            acc = prev[s]
            if s >= 1:
                acc = log_add(acc, prev[s - 1])
            if s >= 2 and ext[s] != BLANK and ext[s] != ext[s - 2]:
                acc = log_add(acc, prev[s - 2])
            if acc > NEG_INF:
                alpha[s] = acc + lp[t, ext[s]]
    total = alpha[-1] if s_len == 1 else log_add(alpha[-1], alpha[-2])
    return -total


def ctc_greedy_search(post: np.ndarray) -> list[int]:
    out, prev = [], BLANK
    for tok in np.argmax(post, axis=1).tolist():
        if tok != prev and tok != BLANK:
            out.append(tok)
        prev = tok
    return out


class CtcPrefixBeamSearch:
    """Frame-synchronous prefix beam search whose state can be advanced chunk by chunk.

    Each frame, only the ``beam`` most likely classes are expanded and the
    prefix set is pruned back to the ``beam`` best by total score.
    """

    def __init__(self, beam: int):
        if beam < 1:
            raise ValueError("beam must be >= 1")
        self.beam = beam
        self.frames = 0
        # prefix -> (log p ending in blank, log p ending in non-blank)
        self.beams: dict[tuple[int, ...], tuple[float, float]] = {(): (0.0, NEG_INF)}

    def advance(self, post: np.ndarray) -> None:
        for row in np.asarray(post, dtype=np.float64):
            self._step(row)

    def _step(self, logp: np.ndarray) -> None:
        n_classes = logp.shape[0]
        if self.beam >= n_classes:
            cand = np.arange(n_classes)
        else:
            cand = np.sort(np.argsort(-logp, kind="stable")[: self.beam])
        prefixes = list(self.beams)
        index = {p: i for i, p in enumerate(prefixes)}
        state = np.array(list(self.beams.values()), dtype=np.float64)
        pb, pnb = state[:, 0], state[:, 1]
        total = np.logaddexp(pb, pnb)
        last = np.array([p[-1] if p else -1 for p in prefixes])
        in_cand = np.zeros(n_classes + 1, dtype=bool)
        in_cand[cand] = True
        lp_ext = np.full(n_classes + 1, NEG_INF)
        lp_ext[:n_classes] = logp

        # staying on the same prefix: via blank, or via a collapsed repeat
        stay_b = total + lp_ext[BLANK] if in_cand[BLANK] else np.full(len(prefixes), NEG_INF)
        stay_nb = np.where(in_cand[last], pnb + lp_ext[last], NEG_INF)

        labels = cand[cand != BLANK]
        # extending by a label; a repeat must come from the blank-ending path
        src = np.where(labels[None, :] == last[:, None], pb[:, None], total[:, None])
        ext = src + logp[labels][None, :]
        lab_pos = {int(c): k for k, c in enumerate(labels.tolist())}

        # an extension that equals an existing prefix merges into its stay entry
        for j, p in enumerate(prefixes):
            if not p:
                continue
            i = index.get(p[:-1])
            k = lab_pos.get(p[-1])
            if i is None or k is None:
                continue
            stay_nb[j] = np.logaddexp(stay_nb[j], ext[i, k])
            ext[i, k] = NEG_INF

        n_beams, n_labels = ext.shape
        stay = np.logaddexp(stay_b, stay_nb)
        scores = np.concatenate([stay, ext.ravel()])
        live = np.flatnonzero(scores > NEG_INF)
        if live.size > self.beam:
            cut = np.partition(scores[live], live.size - self.beam)[live.size - self.beam]
            live = live[scores[live] >= cut]

        def entry(n: int):
            if n < n_beams:
                return prefixes[n], (float(stay_b[n]), float(stay_nb[n]))
            i, k = divmod(n - n_beams, n_labels)
            return prefixes[i] + (int(labels[k]),), (NEG_INF, float(ext[i, k]))

        ranked = sorted(
            (entry(int(n)) for n in live),
            key=lambda kv: sort_key(kv[0], log_add(*kv[1])),
        )
        self.beams = {k: (max(v[0], NEG_INF), max(v[1], NEG_INF)) for k, v in ranked[: self.beam]}
        self.frames += 1

    def hypotheses(self) -> list[Hypothesis]:
        hyps = [Hypothesis(p, pb, pnb) for p, (pb, pnb) in self.beams.items()]
        hyps.sort(key=lambda h: sort_key(h.prefix, h.score))
        return hyps

    def best(self) -> list[int]:
        return list(self.hypotheses()[0].prefix)


def ctc_prefix_beam_search(post: np.ndarray, beam: int) -> list[Hypothesis]:
    search = CtcPrefixBeamSearch(beam)
    search.advance(post)
    return search.hypotheses()
