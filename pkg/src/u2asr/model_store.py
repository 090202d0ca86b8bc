"""Model container: tensor layout, seeded initialisation, the U2W1 file format, int8 quantisation.

File layout (all integers little-endian)::

    b"U2W1" | u32 format_version | u32 metadata_length | metadata (UTF-8 JSON) | payload

The metadata holds the encoder/decoder configs, the vocabulary size and the
tensor manifest, an ordered list of ``{"name", "shape", "dtype"}``. The payload
is every tensor in manifest order, row-major. An ``i8`` tensor of shape
``(rows, cols)`` is followed by ``rows`` float32 scales.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .ctc import ctc_posteriors
from .decoder import AttentionDecoder, DecoderConfig, DecoderLayer
from .encoder import ConvSubsampling, Encoder, EncoderConfig, EncoderLayer
from .errors import BadMagic, ManifestMismatch, ShapeMismatch, Truncated, UnsupportedVersion
from .nn import FeedForward, LayerNorm, LinearLayer, MultiHeadAttention
from .rng import Rng

MAGIC = b"U2W1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sII")


@dataclass
class QuantizedLinear:
    """Linear layer with per-output-row symmetric int8 weights."""

    weight_q: np.ndarray  # int8 (out, in)
    scale: np.ndarray  # float32 (out,)
    bias: np.ndarray  # float32 (out,)

    @property
    def in_features(self) -> int:
        return self.weight_q.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight_q.shape[0]

    def dequantize(self) -> np.ndarray:
        return self.weight_q.astype(np.float32) * self.scale[:, None]

    def reference(self, x: np.ndarray) -> np.ndarray:
        """Float linear with dequantised weights (the semantics the fast path must match)."""
        return LinearLayer(self.dequantize(), self.bias)(x)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"input has {x.shape[-1]} features, layer expects {self.in_features}")
        # integer weights, scale applied once per output column
        return (x @ self.weight_q.T.astype(np.float32)) * self.scale + self.bias


def quantize_linear(layer: LinearLayer) -> QuantizedLinear:
    """scale = max|row| / 127 (1 for an all-zero row); q = round-half-away(w / scale)."""
    w = np.asarray(layer.weight, dtype=np.float32)
    if not np.all(np.isfinite(w)):
        raise ValueError("cannot quantize non-finite weights")
    max_abs = np.abs(w).max(axis=1)
    scale = np.where(max_abs > 0, max_abs / np.float32(127.0), np.float32(1.0)).astype(np.float32)
    # float64 division by the stored float32 scale keeps |q * scale - w| <= scale / 2
    ratio = w.astype(np.float64) / scale.astype(np.float64)[:, None]
    q = np.sign(ratio) * np.floor(np.abs(ratio) + 0.5)
    q = np.clip(q, -127, 127).astype(np.int8)
    return QuantizedLinear(q, scale, np.asarray(layer.bias, dtype=np.float32).copy())


def dequantize_or_int8_apply(q: QuantizedLinear, x: np.ndarray) -> np.ndarray:
    return q(x)


# ---------------------------------------------------------------------------
# tensor layout

@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    kind: str  # "linear" (weight of a LinearLayer), "weight", "bias", "gain", "shift"
    fan_in: int = 0
    fan_out: int = 0


def _linear(prefix, n_in, n_out):
    return [ParamSpec(f"{prefix}.weight", (n_out, n_in), "linear", n_in, n_out),
            ParamSpec(f"{prefix}.bias", (n_out,), "bias")]


def _norm(prefix, d):
    return [ParamSpec(f"{prefix}.gain", (d,), "gain"), ParamSpec(f"{prefix}.shift", (d,), "shift")]


def _mha(prefix, d):
    return [p for name in ("q", "k", "v", "out") for p in _linear(f"{prefix}.{name}", d, d)]


def _ffn(prefix, d, d_ffn):
    return _linear(f"{prefix}.w1", d, d_ffn) + _linear(f"{prefix}.w2", d_ffn, d)


def param_specs(enc: EncoderConfig, dec: DecoderConfig, vocab_size: int) -> list[ParamSpec]:
    """Every tensor of the model in canonical (manifest) order."""
    c, d = enc.d_model, enc.d_model
    specs = [
        ParamSpec("encoder.embed.conv1.weight", (c, 1, 3, 3), "weight", 9, c * 9),
        ParamSpec("encoder.embed.conv1.bias", (c,), "bias"),
        ParamSpec("encoder.embed.conv2.weight", (c, c, 3, 3), "weight", c * 9, c * 9),
        ParamSpec("encoder.embed.conv2.bias", (c,), "bias"),
        *_linear("encoder.embed.out", c * enc.conv_freq_out, d),
    ]
    for i in range(enc.num_layers):
        p = f"encoder.layers.{i}"
        specs += _norm(f"{p}.norm1", d) + _mha(f"{p}.self_attn", d) + _norm(f"{p}.norm2", d)
        specs += _ffn(f"{p}.ffn", d, enc.d_ffn)
    specs += _norm("encoder.final_norm", d)
    specs += _linear("ctc.proj", d, vocab_size + 1)
    n_out = vocab_size + 2
    specs.append(ParamSpec("decoder.embed", (n_out, dec.d_model), "weight", n_out, dec.d_model))
    for i in range(dec.num_layers):
        p = f"decoder.layers.{i}"
        specs += _norm(f"{p}.norm1", dec.d_model) + _mha(f"{p}.self_attn", dec.d_model)
        specs += _norm(f"{p}.norm2", dec.d_model) + _mha(f"{p}.src_attn", dec.d_model)
        specs += _norm(f"{p}.norm3", dec.d_model) + _ffn(f"{p}.ffn", dec.d_model, dec.d_ffn)
    specs += _norm("decoder.final_norm", dec.d_model)
    specs += _linear("decoder.out", dec.d_model, n_out)
    return specs


# ---------------------------------------------------------------------------
# model

class Model:
    """Immutable U2 model: encoder, CTC projection and attention decoder."""

    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, vocab_size: int, tensors: dict):
        if enc_cfg.d_model != dec_cfg.d_model:
            raise ValueError("encoder and decoder must share d_model")
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.vocab_size = vocab_size
        self.specs = param_specs(enc_cfg, dec_cfg, vocab_size)
        names = [s.name for s in self.specs]
        if set(names) != set(tensors):
            missing, extra = set(names) - set(tensors), set(tensors) - set(names)
            raise ManifestMismatch(f"tensor set mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
        self.tensors = {n: tensors[n] for n in names}
        for t in self.tensors.values():
            for arr in ((t.weight_q, t.scale) if isinstance(t, QuantizedLinear) else (t,)):
                arr.setflags(write=False)
        for s in self.specs:
            t = self.tensors[s.name]
            shape = t.weight_q.shape if isinstance(t, QuantizedLinear) else t.shape
            if tuple(shape) != s.shape:
                raise ManifestMismatch(f"{s.name}: shape {tuple(shape)}, expected {s.shape}")
        self._build()

    @property
    def quantized(self) -> bool:
        return any(isinstance(t, QuantizedLinear) for t in self.tensors.values())

    def _lin(self, prefix):
        w = self.tensors[f"{prefix}.weight"]
        if isinstance(w, QuantizedLinear):
            return w
        return LinearLayer(w, self.tensors[f"{prefix}.bias"])

    def _norm(self, prefix):
        return LayerNorm(self.tensors[f"{prefix}.gain"], self.tensors[f"{prefix}.shift"])

    def _mha(self, prefix, heads):
        return MultiHeadAttention(*(self._lin(f"{prefix}.{n}") for n in ("q", "k", "v", "out")), heads=heads)

    def _ffn(self, prefix):
        return FeedForward(self._lin(f"{prefix}.w1"), self._lin(f"{prefix}.w2"))

    def _build(self):
        t, enc, dec = self.tensors, self.enc_cfg, self.dec_cfg
        embed = ConvSubsampling(t["encoder.embed.conv1.weight"], t["encoder.embed.conv1.bias"],
                                t["encoder.embed.conv2.weight"], t["encoder.embed.conv2.bias"],
                                self._lin("encoder.embed.out"))
        layers = [EncoderLayer(self._norm(f"encoder.layers.{i}.norm1"),
                               self._mha(f"encoder.layers.{i}.self_attn", enc.heads),
                               self._norm(f"encoder.layers.{i}.norm2"),
                               self._ffn(f"encoder.layers.{i}.ffn"))
                  for i in range(enc.num_layers)]
        self.encoder = Encoder(enc, embed, layers, self._norm("encoder.final_norm"))
        self.ctc_proj = self._lin("ctc.proj")
        dlayers = [DecoderLayer(self._norm(f"decoder.layers.{i}.norm1"),
                                self._mha(f"decoder.layers.{i}.self_attn", dec.heads),
                                self._norm(f"decoder.layers.{i}.norm2"),
                                self._mha(f"decoder.layers.{i}.src_attn", dec.heads),
                                self._norm(f"decoder.layers.{i}.norm3"),
                                self._ffn(f"decoder.layers.{i}.ffn"))
                   for i in range(dec.num_layers)]
        self.decoder = AttentionDecoder(dec, self.vocab_size, t["decoder.embed"], dlayers,
                                        self._norm("decoder.final_norm"), self._lin("decoder.out"))

    def ctc_posteriors(self, encoder_out: np.ndarray) -> np.ndarray:
        return ctc_posteriors(encoder_out, self.ctc_proj)

    def metadata(self) -> dict:
        manifest = []
        for s in self.specs:
            q = isinstance(self.tensors[s.name], QuantizedLinear)
            manifest.append({"name": s.name, "shape": list(s.shape), "dtype": "i8" if q else "f32"})
        return {"encoder": asdict(self.enc_cfg), "decoder": asdict(self.dec_cfg),
                "vocab_size": self.vocab_size, "blank_id": 0, "sos_id": self.vocab_size + 1,
                "eos_id": self.vocab_size + 1, "tensors": manifest}


def init_seeded(enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, vocab_size: int, seed: int) -> Model:
    """Xavier-uniform weights from :class:`Rng`; biases and norm shifts 0, norm gains 1."""
    rng = Rng(seed)
    tensors = {}
    for s in param_specs(enc_cfg, dec_cfg, vocab_size):
        if s.kind in ("linear", "weight"):
            bound = math.sqrt(6.0 / (s.fan_in + s.fan_out))
            u = rng.uniform_array(int(np.prod(s.shape)))
            tensors[s.name] = ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(s.shape)
        elif s.kind == "gain":
            tensors[s.name] = np.ones(s.shape, dtype=np.float32)
        else:
            tensors[s.name] = np.zeros(s.shape, dtype=np.float32)
    return Model(enc_cfg, dec_cfg, vocab_size, tensors)


def quantize_model(model: Model) -> Model:
    """Quantize every linear-layer weight; conv, embeddings and norms stay float32."""
    tensors = dict(model.tensors)
    for s in model.specs:
        if s.kind == "linear" and not isinstance(tensors[s.name], QuantizedLinear):
            bias_name = s.name[: -len("weight")] + "bias"
            tensors[s.name] = quantize_linear(LinearLayer(tensors[s.name], tensors[bias_name]))
    return Model(model.enc_cfg, model.dec_cfg, model.vocab_size, tensors)


# ---------------------------------------------------------------------------
# serialization

def _tensor_nbytes(shape, dtype) -> int:
    n = int(np.prod(shape))
    if dtype == "f32":
        return 4 * n
    if dtype == "i8":
        if len(shape) != 2:
            raise ManifestMismatch(f"i8 tensors must be 2-D, got shape {shape}")
        return n + 4 * shape[0]
    raise ManifestMismatch(f"unknown dtype {dtype!r}")


def save(model: Model) -> bytes:
    meta = json.dumps(model.metadata(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(meta)), meta]
    for s in model.specs:
        t = model.tensors[s.name]
        if isinstance(t, QuantizedLinear):
            parts.append(t.weight_q.astype(np.int8).tobytes())
            parts.append(t.scale.astype("<f4").tobytes())
        else:
            parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(parts)


def load(data: bytes) -> Model:
    if len(data) < _HEADER.size:
        raise Truncated(f"{len(data)} bytes is shorter than the {_HEADER.size}-byte header")
    magic, version, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version}, this build reads {FORMAT_VERSION}")
    meta_end = _HEADER.size + meta_len
    if len(data) < meta_end:
        raise Truncated("metadata extends past end of file")
    try:
        meta = json.loads(data[_HEADER.size:meta_end].decode("utf-8"))
        enc_cfg = EncoderConfig(**meta["encoder"])
        dec_cfg = DecoderConfig(**meta["decoder"])
        vocab_size = int(meta["vocab_size"])
        manifest = meta["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise ManifestMismatch(f"unreadable metadata: {e}") from e

    names = [m["name"] for m in manifest]
    if len(set(names)) != len(names):
        raise ManifestMismatch("duplicate tensor names in manifest")
    expected = [(s.name, s.shape) for s in param_specs(enc_cfg, dec_cfg, vocab_size)]
    if [(m["name"], tuple(m["shape"])) for m in manifest] != expected:
        raise ManifestMismatch("manifest does not match the configured architecture")
    sizes = [_tensor_nbytes(tuple(m["shape"]), m["dtype"]) for m in manifest]
    payload = memoryview(data)[meta_end:]
    if len(payload) < sum(sizes):
        raise Truncated(f"payload has {len(payload)} bytes, manifest needs {sum(sizes)}")
    if len(payload) > sum(sizes):
        raise ManifestMismatch(f"payload has {len(payload) - sum(sizes)} trailing bytes")

    tensors, off = {}, 0
    for m, size in zip(manifest, sizes):
        shape = tuple(m["shape"])
        chunk = payload[off:off + size]
        off += size
        if m["dtype"] == "i8":
            n = int(np.prod(shape))
            q = np.frombuffer(chunk[:n], dtype=np.int8).reshape(shape).copy()
            scale = np.frombuffer(chunk[n:], dtype="<f4").astype(np.float32)
            tensors[m["name"]] = QuantizedLinear(q, scale, None)
        else:
            tensors[m["name"]] = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(shape)
    for name, t in tensors.items():
        if isinstance(t, QuantizedLinear):
            t.bias = tensors[name[: -len("weight")] + "bias"]
    return Model(enc_cfg, dec_cfg, vocab_size, tensors)


def save_file(model: Model, path) -> None:
    Path(path).write_bytes(save(model))


def load_file(path) -> Model:
    return load(Path(path).read_bytes())
