"""Benchmark client: streams WAVs to the server and tabulates L1/L2/L3/RTF."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import websockets
from websockets.sync.client import connect

from .errors import ConnectionLost, MalformedReply
from .frontend import FRAME_SHIFT, SAMPLE_RATE, AudioBuffer, read_wav
from .masking import FULL
from .scoring import model_latency_ms

logger = logging.getLogger(__name__)

LATENCY_FIELDS = ("L1_ms", "L2_ms", "L3_ms", "rtf")


@dataclass
class BenchReport:
    chunk_size: int
    utterances: list[dict] = field(default_factory=list)

    @property
    def mean(self) -> dict:
        if not self.utterances:
            return {}
        return {k: float(np.mean([u[k] for u in self.utterances])) for k in LATENCY_FIELDS}

    def to_dict(self) -> dict:
        return {"utterances": self.utterances, "mean": self.mean}


@dataclass
class StreamResult:
    partials: list[list[int]]
    tokens: list[int]
    latency: dict


def stream_audio(url: str, audio: AudioBuffer, chunk_size: int, beam: int = 10, ctc_weight: float = 0.5,
                 realtime: bool = False, frame_samples: int = FRAME_SHIFT, timeout: float = 60.0,
                 mode: str | None = None) -> StreamResult:
    """Run one utterance through the server and collect partials and the final result."""
    start = {"type": "start", "sample_rate": SAMPLE_RATE, "chunk_size": chunk_size, "beam": beam,
             "ctc_weight": ctc_weight}
    if mode is not None:
        start["mode"] = mode
    try:
        with connect(url, max_size=None, open_timeout=timeout) as ws:
            ws.send(json.dumps(start))
            pcm = audio.samples.astype("<i2")
            t0 = time.perf_counter()
            for i, off in enumerate(range(0, len(pcm), frame_samples)):
                if realtime:
                    delay = t0 + i * frame_samples / SAMPLE_RATE - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                ws.send(pcm[off:off + frame_samples].tobytes())
            ws.send(json.dumps({"type": "end"}))
            partials = []
            while True:
                msg = _parse(ws.recv(timeout=timeout))
                if msg["type"] == "partial":
                    partials.append(msg["tokens"])
                elif msg["type"] == "final":
                    return StreamResult(partials, msg["tokens"], msg["latency"])
                elif msg["type"] == "error":
                    raise MalformedReply(f"server error {msg.get('code')}: {msg.get('message')}")
                else:
                    raise MalformedReply(f"unexpected message type {msg['type']!r}")
    except (websockets.ConnectionClosed, OSError, TimeoutError) as e:
        raise ConnectionLost(str(e)) from e


def _parse(raw) -> dict:
    if not isinstance(raw, str):
        raise MalformedReply("server sent a binary frame")
    try:
        msg = json.loads(raw)
    except ValueError as e:
        raise MalformedReply(f"invalid JSON from server: {e}") from e
    if not isinstance(msg, dict) or "type" not in msg:
        raise MalformedReply("reply lacks a type field")
    if msg["type"] == "final":
        lat = msg.get("latency")
        if not isinstance(lat, dict) or any(k not in lat for k in LATENCY_FIELDS) or "tokens" not in msg:
            raise MalformedReply("final message lacks tokens or latency fields")
    return msg


def read_wav_list(path) -> list[tuple[str, Path]]:
    """Kaldi-style ``utt_id path`` lines; a bare path uses the file stem as id."""
    entries = []
    base = Path(path).parent
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        utt, wav = (parts[0], parts[1]) if len(parts) > 1 else (Path(parts[0]).stem, parts[0])
        wav = Path(wav)
        entries.append((utt, wav if wav.is_absolute() else base / wav))
    return entries


def bench_client(server_url: str, wavs, chunk_size: int, realtime: bool = False, beam: int = 10,
                 ctc_weight: float = 0.5) -> BenchReport:
    """``wavs`` is a list of (utt_id, path-or-AudioBuffer)."""
    report = BenchReport(chunk_size)
    for utt, src in wavs:
        audio = src if isinstance(src, AudioBuffer) else read_wav(src)
        res = stream_audio(server_url, audio, chunk_size, beam, ctc_weight, realtime)
        row = {"id": utt, **{k: float(res.latency[k]) for k in LATENCY_FIELDS}}
        report.utterances.append(row)
        logger.info("%s C=%d %s", utt, chunk_size, row)
    return report


def format_table(reports: list[BenchReport]) -> str:
    """Aligned text table, one row per chunk size: decoding_chunk | L1 | L2 | L3 (ms) | RTF."""
    header = ["decoding_chunk", "L1 (ms)", "L2 (ms)", "L3 (ms)", "RTF"]
    rows = []
    for r in reports:
        chunk = "full" if r.chunk_size == FULL else str(r.chunk_size)
        mean = r.mean
        if mean:
            l1 = f"{mean['L1_ms']:.0f}"
            rest = [f"{mean['L2_ms']:.0f}", f"{mean['L3_ms']:.0f}", f"{mean['rtf']:.3f}"]
        else:
            l1 = f"{model_latency_ms(r.chunk_size):.0f}" if r.chunk_size != FULL else "-"
            rest = ["-", "-", "-"]
        rows.append([chunk, l1, *rest])
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in [header, *rows]]
    return "\n".join(lines)
