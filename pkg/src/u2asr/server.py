"""WebSocket streaming recognition server.

Protocol (one utterance per connection)::

    client: {"type": "start", "sample_rate": 16000, "chunk_size": C, "beam": B, "ctc_weight": w}
    client: binary frames of s16le mono PCM ...
    server: {"type": "partial", "tokens": [...]}            (zero or more)
    client: {"type": "end"}
    server: {"type": "final", "tokens": [...], "latency": {"L1_ms", "L2_ms", "L3_ms", "rtf"}}

Protocol violations get ``{"type": "error", "code": ..., "message": ...}`` and
the connection is closed.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import websockets
from websockets.asyncio.server import ServerConnection, serve as ws_serve

from .errors import U2Error
from .frontend import SAMPLE_RATE
from .model_store import Model, load_file, quantize_model
from .runtime import ATTENTION_RESCORING, DecodeConfig, Session

logger = logging.getLogger(__name__)


def error_message(code: str, message: str) -> str:
    return json.dumps({"type": "error", "code": code, "message": message})


def partial_message(tokens) -> str:
    return json.dumps({"type": "partial", "tokens": list(tokens)})


def final_message(result) -> str:
    return json.dumps({"type": "final", "tokens": list(result.tokens), "latency": result.latency.to_dict()})


def config_from_start(msg: dict) -> DecodeConfig:
    if msg.get("sample_rate", SAMPLE_RATE) != SAMPLE_RATE:
        raise ValueError(f"sample_rate must be {SAMPLE_RATE}")
    return DecodeConfig(chunk_size=int(msg.get("chunk_size", 16)), beam=int(msg.get("beam", 10)),
                        ctc_weight=float(msg.get("ctc_weight", 0.5)),
                        mode=msg.get("mode", ATTENTION_RESCORING))


class RecognitionServer:
    """Each connection drives one :class:`Session`; at most ``max_sessions`` at a time."""

    def __init__(self, model: Model, max_sessions: int = 4):
        if max_sessions < 1:
            raise ValueError("max_sessions must be >= 1")
        self.model = model
        self.max_sessions = max_sessions
        self._active = 0
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=max_sessions, thread_name_prefix="u2-session")

    def _acquire(self) -> bool:
        with self._lock:
            if self._active >= self.max_sessions:
                return False
            self._active += 1
            return True

    def _release(self) -> None:
        with self._lock:
            self._active -= 1

    async def handle(self, ws: ServerConnection) -> None:
        if not self._acquire():
            await ws.send(error_message("busy", f"server is at its limit of {self.max_sessions} sessions"))
            await ws.close()
            return
        try:
            await self._run(ws)
        except websockets.ConnectionClosed:
            logger.info("client went away")
        finally:
            self._release()

    async def _fail(self, ws, code, message):
        await ws.send(error_message(code, message))
        await ws.close()

    async def _run(self, ws: ServerConnection) -> None:
        loop = asyncio.get_running_loop()
        session = None
        async for message in ws:
            if isinstance(message, bytes):
                if session is None:
                    return await self._fail(ws, "protocol", "audio received before start")
                if len(message) % 2:
                    return await self._fail(ws, "protocol", "PCM frame has an odd number of bytes")
                pcm = np.frombuffer(message, dtype="<i2").astype(np.int16)
                # one utterance is processed serially on a worker thread
                results = await loop.run_in_executor(self._pool, session.push_audio, pcm)
                for r in results:
                    await ws.send(partial_message(r.tokens))
                continue
            try:
                msg = json.loads(message)
                kind = msg["type"]
            except (ValueError, KeyError, TypeError):
                return await self._fail(ws, "protocol", "text frames must be JSON objects with a type")
            if kind == "start":
                if session is not None:
                    return await self._fail(ws, "protocol", "duplicate start")
                try:
                    session = Session(self.model, config_from_start(msg))
                except (U2Error, ValueError, TypeError) as e:
                    return await self._fail(ws, "bad_config", str(e))
            elif kind == "end":
                if session is None:
                    return await self._fail(ws, "protocol", "end received before start")
                result = await loop.run_in_executor(self._pool, session.finalize)
                await ws.send(final_message(result))
                await ws.close()
                return
            else:
                return await self._fail(ws, "protocol", f"unknown message type {kind!r}")

    def close(self):
        self._pool.shutdown(wait=False)


async def serve_forever(model: Model, host: str, port: int, max_sessions: int = 4,
                        ready: asyncio.Event | None = None) -> None:
    server = RecognitionServer(model, max_sessions)
    try:
        async with ws_serve(server.handle, host, port, max_size=None) as ws_server:
            addr = ws_server.sockets[0].getsockname()
            logger.info("listening on ws://%s:%d", addr[0], addr[1])
            if ready is not None:
                ready.set()
            await asyncio.get_running_loop().create_future()
    finally:
        server.close()


def load_model(model_path, quantized: bool = False) -> Model:
    model = load_file(model_path)
    return quantize_model(model) if quantized and not model.quantized else model


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"--bind expects HOST:PORT, got {bind!r}")
    return host, int(port)


class BackgroundServer:
    """Runs the server on its own event-loop thread; used by tests and the bench command."""

    def __init__(self, model: Model, host: str = "127.0.0.1", port: int = 0, max_sessions: int = 4):
        self.model, self.host, self.max_sessions = model, host, max_sessions
        self.port = port
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._loop.run_forever, daemon=True)
        self._server = None
        self._ws_server = None

    def __enter__(self):
        self._thread.start()
        fut = asyncio.run_coroutine_threadsafe(self._start(), self._loop)
        fut.result(timeout=10)
        return self

    async def _start(self):
        self._server = RecognitionServer(self.model, self.max_sessions)
        self._ws_server = await ws_serve(self._server.handle, self.host, self.port, max_size=None)
        self.port = self._ws_server.sockets[0].getsockname()[1]

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}"

    def __exit__(self, *exc):
        async def stop():
            self._ws_server.close()
            await self._ws_server.wait_closed()
        asyncio.run_coroutine_threadsafe(stop(), self._loop).result(timeout=10)
        self._server.close()
        self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join(timeout=10)
