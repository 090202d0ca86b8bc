"""Streaming two-pass (CTC first pass, attention rescoring) speech recognition runtime."""

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .frontend import AudioBuffer, compute_fbank, read_wav
from .masking import FULL
from .model_store import Model, init_seeded, load, load_file, quantize_model, save, save_file
from .runtime import DecodeConfig, Session, decode_features, open_session

__all__ = [
    "AudioBuffer", "DecodeConfig", "DecoderConfig", "EncoderConfig", "FULL", "Model", "Session",
    "compute_fbank", "decode_features", "init_seeded", "load", "load_file", "open_session",
    "quantize_model", "read_wav", "save", "save_file",
]
__version__ = "0.1.0"
