"""Command-line tools: init, quantize, decode, loss, serve, bench."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path

from .bench import bench_client, format_table, read_wav_list
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import U2Error
from .frontend import compute_fbank, read_wav
from .model_store import init_seeded, quantize_model, save_file
from .runtime import MODES, DecodeConfig, decode_features
from .scoring import ScoringConfig, cer, combined_loss
from .server import load_model, parse_bind, serve_forever

logger = logging.getLogger("u2asr")


class CliError(Exception):
    pass


def _chunk(value: str) -> int:
    c = int(value)
    if c != -1 and c < 1:
        raise argparse.ArgumentTypeError("chunk size must be -1 (full) or >= 1")
    return c


def _inputs(args) -> list[tuple[str, Path]]:
    entries = [(Path(w).stem, Path(w)) for w in args.wav or []]
    if args.wav_list:
        entries += read_wav_list(args.wav_list)
    if not entries:
        raise CliError("no input: pass --wav and/or --wav-list")
    return entries


def _read_units(path):
    if path is None:
        return None
    return [line.strip() for line in Path(path).read_text().splitlines()]


def _read_ref(path, units) -> dict[str, list[int]]:
    index = {u: i for i, u in enumerate(units)} if units else None
    refs = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        try:
            refs[parts[0]] = [index[t] if index else int(t) for t in parts[1:]]
        except (KeyError, ValueError) as e:
            raise CliError(f"bad reference token in line {line!r}: {e}") from e
    return refs


def cmd_init(args) -> int:
    enc = EncoderConfig(num_layers=args.enc_layers, d_model=args.d_model, heads=args.heads, d_ffn=args.d_ffn)
    dec = DecoderConfig(num_layers=args.dec_layers, d_model=args.d_model, heads=args.heads, d_ffn=args.d_ffn)
    model = init_seeded(enc, dec, args.vocab, args.seed)
    save_file(quantize_model(model) if args.quantized else model, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_quantize(args) -> int:
    save_file(quantize_model(load_model(args.model)), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_decode(args) -> int:
    model = load_model(args.model, args.quantized)
    cfg = DecodeConfig(chunk_size=args.chunk_size, beam=args.beam, ctc_weight=args.ctc_weight, mode=args.mode)
    units = _read_units(args.units)
    refs = _read_ref(args.ref, units) if args.ref else None
    errors = ref_len = 0
    for utt, wav in _inputs(args):
        tokens = decode_features(model, compute_fbank(read_wav(wav)), cfg)
        text = " ".join(units[t] for t in tokens) if units else " ".join(map(str, tokens))
        print(f"{utt}\t{text}")
        if refs is not None:
            if utt not in refs:
                raise CliError(f"no reference for utterance {utt}")
            ref = refs[utt]
            errors += round(cer(ref, tokens) * len(ref))
            ref_len += len(ref)
    if refs is not None:
        print(f"CER {errors / ref_len:.4f}")
    return 0


def cmd_loss(args) -> int:
    model = load_model(args.model, args.quantized)
    refs = _read_ref(args.ref, _read_units(args.units))
    scoring = ScoringConfig(lam=args.lam)
    for utt, wav in _inputs(args):
        enc = model.encoder.encode_full(compute_fbank(read_wav(wav)), args.chunk_size)
        loss = combined_loss(model.ctc_posteriors(enc), enc, refs[utt], model.decoder, scoring)
        print(f"{utt}\t{loss:.6f}")
    return 0


def cmd_serve(args) -> int:
    model = load_model(args.model, args.quantized)
    host, port = parse_bind(args.bind)
    try:
        asyncio.run(serve_forever(model, host, port, args.max_sessions))
    except OSError as e:
        raise CliError(f"cannot bind {args.bind}: {e}") from e
    except KeyboardInterrupt:
        pass
    return 0


def cmd_bench(args) -> int:
    wavs = read_wav_list(args.wav_list) if args.wav_list else []
    reports = [bench_client(args.server, wavs, c, realtime=args.realtime, beam=args.beam,
                            ctc_weight=args.ctc_weight) for c in args.chunk_sizes]
    doc = {str(r.chunk_size): r.to_dict() for r in reports}
    if args.json:
        Path(args.json).write_text(json.dumps(doc, indent=2))
    else:
        print(json.dumps(doc, indent=2))
    print(format_table(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="u2asr", description="Streaming two-pass CTC/attention ASR runtime")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def model_flags(sp, required=True):
        sp.add_argument("--model", required=required, help="U2W1 model file")
        sp.add_argument("--quantized", action="store_true", help="quantize linear layers to int8 on load")

    def input_flags(sp):
        sp.add_argument("--wav", action="append", help="16 kHz mono s16le WAV (repeatable)")
        sp.add_argument("--wav-list", help="file of 'utt_id path' lines")
        sp.add_argument("--units", help="symbol table, one symbol per line, line index = token id")

    sp = sub.add_parser("init", help="write a seeded random model")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--vocab", type=int, default=10)
    sp.add_argument("--d-model", type=int, default=16)
    sp.add_argument("--heads", type=int, default=2)
    sp.add_argument("--d-ffn", type=int, default=64)
    sp.add_argument("--enc-layers", type=int, default=2)
    sp.add_argument("--dec-layers", type=int, default=1)
    sp.add_argument("--quantized", action="store_true")
    sp.set_defaults(func=cmd_init)

    sp = sub.add_parser("quantize", help="convert a float model to int8 linear layers")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_quantize)

    sp = sub.add_parser("decode", help="recognize WAV files")
    model_flags(sp)
    input_flags(sp)
    sp.add_argument("--mode", choices=MODES, default="attention_rescoring")
    sp.add_argument("--chunk-size", type=_chunk, default=-1, help="-1 = full attention")
    sp.add_argument("--beam", type=int, default=10)
    sp.add_argument("--ctc-weight", type=float, default=0.5)
    sp.add_argument("--ref", help="file of 'utt_id tok tok ...' references; prints corpus CER")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("loss", help="evaluate the joint CTC/attention loss")
    model_flags(sp)
    input_flags(sp)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.3)
    sp.add_argument("--chunk-size", type=_chunk, default=-1)
    sp.set_defaults(func=cmd_loss)

    sp = sub.add_parser("serve", help="run the WebSocket recognition server")
    model_flags(sp)
    sp.add_argument("--bind", default="127.0.0.1:10086", help="HOST:PORT")
    sp.add_argument("--max-sessions", type=int, default=4)
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("bench", help="latency/RTF benchmark against a running server")
    sp.add_argument("--server", default="ws://127.0.0.1:10086")
    sp.add_argument("--wav-list", help="file of 'utt_id path' lines (empty -> empty report)")
    sp.add_argument("--chunk-sizes", type=lambda s: [_chunk(x) for x in s.split(",")], default=[16, 8, 4])
    sp.add_argument("--beam", type=int, default=10)
    sp.add_argument("--ctc-weight", type=float, default=0.5)
    sp.add_argument("--realtime", action="store_true", help="pace audio at 160 samples per 10 ms")
    sp.add_argument("--json", help="write the BenchReport JSON here instead of stdout")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, U2Error, ValueError, OSError) as e:
        print(f"u2asr: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
