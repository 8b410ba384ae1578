"""``tempest`` command line: inspect, tokenize, synth, train, eval, infer-multirate, bench."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from tempest.bytestream import FormatKind, load_stream
from tempest.errors import ConfigError, NotApplicable, TempestError
from tempest.model import ModelConfig
from tempest.parsers import DEFAULT_CHUNK_BYTES, parse_stream, prepare_stream
from tempest.tokenizer import DEFAULT_L_MAX, compute_tbr, compute_tps, one_hot, tokenize_stream, write_token_matrix

_FORMATS = {"mp3": FormatKind.MP3, "opus": FormatKind.OPUS_OGG, "jpeg": FormatKind.JPEG}


class Output:
    """Human-readable lines, or one JSON record per line with ``--json``."""

    def __init__(self, as_json: bool, stream=None):
        self.as_json = as_json
        self.stream = stream

    def record(self, rec: dict, text: str | None = None) -> None:
        stream = self.stream or sys.stdout
        if self.as_json:
            print(json.dumps(rec, sort_keys=True, default=_jsonable), file=stream)
        else:
            print(text if text is not None else _kv(rec), file=stream)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _kv(rec: dict) -> str:
    return "  ".join(f"{k}={_fmt(v)}" for k, v in rec.items())


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _rates(text: str | None) -> tuple[int, ...] | None:
    """``20,26,32`` (kbps) or ``20000,26000`` (bps)."""
    if not text:
        return None
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --bitrates value {text!r}") from exc
    return tuple(int(v * 1000) if v < 1000 else int(v) for v in vals)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _model_config(args, **overrides) -> ModelConfig:
    raw = args.config_data
    model = dict(raw.get("model", raw if "N" in raw else {}))
    model.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_dict(model)


def _train_config(args, num_classes: int, multi_label: bool):
    from tempest.harness import TrainConfig

    raw = args.config_data
    train = {k: v for k, v in raw.items() if k != "model"} if "model" in raw else {}
    model = _model_config(args, num_classes=num_classes, multi_label=multi_label)
    train["model"] = model
    if args.seed is not None:
        train["seed"] = args.seed
    if args.steps is not None:
        train["steps"] = args.steps
    if args.bitrates:
        train["bitrate_set"] = _rates(args.bitrates)
    return TrainConfig(**train)


# -- subcommands ---------------------------------------------------------------

def cmd_inspect(args, out: Output) -> int:
    s = prepare_stream(load_stream(args.file), _FORMATS.get(args.format), args.keep_metadata)
    seq = parse_stream(s, args.chunk_bytes)
    for i, b in enumerate(seq):
        out.record({"block": i, "offset": b.offset, "length": b.length, "duration_s": b.duration_s},
                   f"{i:6d}  offset={b.offset:<9d} length={b.length:<6d} duration_s={b.duration_s:.6f}")
    summary = {
        "summary": True,
        "format": seq.source_format.value,
        "blocks": len(seq),
        "avg_block_length": seq.mean_block_length,
        "total_duration_s": seq.total_duration_s,
        "dropped": seq.dropped,
        "structural_bytes": sum(len(c) for _, c in seq.structural),
        "tbr": compute_tbr(args.l_prime, seq.mean_block_length) if len(seq) else None,
    }
    if len(seq):
        summary["avg_block_duration_s"] = seq.total_duration_s / len(seq)
    try:
        summary["tps"] = compute_tps(seq, args.l_prime)
    except NotApplicable:
        summary["tps"] = None
    headers = {(b.info.version, b.info.layer, b.info.bitrate_bps, b.info.samplerate_hz)
               for b in seq if b.info is not None and hasattr(b.info, "bitrate_bps")}
    if headers:
        summary["mpeg_headers"] = sorted(f"MPEG-{v} L{l} {br // 1000}kbps {sr}Hz" for v, l, br, sr in headers)
    out.record(summary)
    return 0


def cmd_tokenize(args, out: Output) -> int:
    s = prepare_stream(load_stream(args.file), _FORMATS.get(args.format), args.keep_metadata)
    seq = parse_stream(s, args.chunk_bytes)
    label = None
    if args.label is not None:
        if args.num_classes is None:
            raise ConfigError("--label needs --num-classes")
        label = one_hot(args.label, args.num_classes)
    tm = tokenize_stream(seq, args.l_max, args.max_blocks, label)
    if not args.out:
        raise ConfigError("tokenize needs --out")
    write_token_matrix(args.out, tm)
    out.record({"out": args.out, "rows": tm.rows, "L_max": tm.L_max,
                "num_classes": 0 if label is None else len(label), "duration_s": tm.duration_s})
    return 0


def cmd_synth(args, out: Output) -> int:
    from tempest import fixtures
    from tempest.parsers import synth_mp3_stream

    if not args.out:
        raise ConfigError("synth needs --out")
    seed = args.seed or 0
    if args.kind == "mp3":
        s = synth_mp3_stream(args.frames, args.bitrate, args.samplerate, seed)
        Path(args.out).write_bytes(s.data)
        out.record({"out": args.out, "bytes": len(s), "frames": args.frames})
    elif args.kind == "dataset":
        manifest = fixtures.toy_mp3_dataset(args.out, per_class=args.per_class, frames=args.frames, seed=seed)
        out.record({"manifest": str(manifest)})
    elif args.kind == "corpus":
        mp3 = fixtures.mp3_corpus(Path(args.out) / "mp3")
        opus = fixtures.opus_corpus(Path(args.out) / "opus")
        jpeg_dir = Path(args.out) / "jpeg"
        jpeg_dir.mkdir(parents=True, exist_ok=True)
        for i, kw in enumerate(({}, {"restart_marker_blocks": 4}, {"progressive": True})):
            (jpeg_dir / f"img_{i}.jpg").write_bytes(fixtures.jpeg_bytes((64, 64), 75, seed + i, **kw))
        out.record({"mp3": len(mp3), "opus": len(opus), "jpeg": 3, "out": args.out})
    return 0


def cmd_train(args, out: Output) -> int:
    from tempest.harness import Task, read_manifest, train

    manifest = read_manifest(args.manifest)
    cfg = _train_config(args, manifest.num_classes, manifest.task is Task.MULTI_LABEL)
    if not args.out:
        raise ConfigError("train needs --out DIR")

    ckpt, metrics = train(manifest, cfg, args.out, eval_split=args.eval_split)
    for rec in metrics:
        out.record(rec)
    out.record({"checkpoint": str(ckpt)})
    return 0


def cmd_eval(args, out: Output) -> int:
    from tempest.harness import evaluate, read_manifest

    result = evaluate(args.checkpoint, read_manifest(args.manifest), args.split)
    out.record(result)
    return 0


def cmd_infer_multirate(args, out: Output) -> int:
    from tempest.augment import DEFAULT_INFER_RATES, BitrateSet, Codec, TranscodeCache
    from tempest.harness import multirate_infer

    streams = []
    if args.source:
        rates = _rates(args.bitrates) or DEFAULT_INFER_RATES
        codec = Codec(args.format or "mp3")
        rates = BitrateSet(rates, codec).rates_bps
        cache_dir = args.cache_dir or tempfile.mkdtemp(prefix="tempest-")
        cache = TranscodeCache(cache_dir)
        streams = [cache.get(args.source, codec, r, args.samplerate) for r in rates]
    streams += [prepare_stream(load_stream(f), _FORMATS.get(args.format)) for f in args.files]
    if not streams:
        raise ConfigError("give encoded FILEs or --source")
    pred = multirate_infer(args.checkpoint, streams, aggregate=args.aggregate)
    out.record({"prediction": pred.label, "probs": [round(float(p), 6) for p in pred.probs],
                "streams": len(streams)})
    return 0


def cmd_bench(args, out: Output) -> int:
    from tempest.harness import bench

    cfg = _model_config(args, L_prime=args.l_prime, P=args.P, C=args.C)
    report = bench(cfg, args.seconds, args.blocks_per_second)
    if out.as_json:
        out.record(report)
        return 0
    lines = [
        f"clip seconds: {report['clip_seconds']:g}",
        f"blocks: {report['blocks']}",
        f"tokens: {report['tokens']}",
        f"attention entries: {report['attention_entries']}",
        f"tokens per second: {report['tps']:g}",
        f"token-to-byte ratio: {report['tbr']:.6g}",
        f"flops (2*MAC, matmuls, with decoder): {report['flops'] / 1e9:.3f} G",
        f"flops without decoder: {report['flops_no_decoder'] / 1e9:.3f} G",
        f"parameters: {report['params']}",
        f"byte baseline tokens: {report['byte_baseline_tokens']}",
        f"byte baseline attention entries: {report['byte_baseline_attention_entries']}",
    ]
    if "reported_flops_g" in report:
        lines.append(f"reported flops for this depth split: {report['reported_flops_g']} G")
    out.record(report, "\n".join(lines))
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--format", choices=sorted(_FORMATS), help="override format detection / pick codec")
    common.add_argument("--bitrates", help="comma-separated list, kbps or bps")
    common.add_argument("--out", help="output path")
    common.add_argument("--json", action="store_true", help="one JSON record per line")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="tempest", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("inspect", parents=[common], help="print the block table of a compressed file")
    p.add_argument("file")
    p.add_argument("--keep-metadata", action="store_true")
    p.add_argument("--chunk-bytes", type=int, default=DEFAULT_CHUNK_BYTES)
    p.add_argument("--l-prime", type=int, default=1)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("tokenize", parents=[common], help="write a token-matrix file")
    p.add_argument("file")
    p.add_argument("--keep-metadata", action="store_true")
    p.add_argument("--chunk-bytes", type=int, default=DEFAULT_CHUNK_BYTES)
    p.add_argument("--l-max", type=int, default=DEFAULT_L_MAX)
    p.add_argument("--max-blocks", type=int)
    p.add_argument("--label", type=int)
    p.add_argument("--num-classes", type=int)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("synth", parents=[common], help="generate fixtures")
    p.add_argument("kind", choices=("mp3", "dataset", "corpus"))
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--bitrate", type=int, default=128000)
    p.add_argument("--samplerate", type=int, default=44100)
    p.add_argument("--per-class", type=int, default=16)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer-multirate", parents=[common], help="ensemble predictions over bit rates")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("files", nargs="*", help="already-encoded versions of one signal")
    p.add_argument("--source", help="waveform to re-encode at each --bitrates entry (default 23,26,29,32 kbps)")
    p.add_argument("--samplerate", type=int, default=0)
    p.add_argument("--cache-dir")
    p.add_argument("--aggregate", choices=("prob", "logit"), default="prob")
    p.set_defaults(func=cmd_infer_multirate)

    p = sub.add_parser("bench", parents=[common], help="sequence length / attention / FLOPs report")
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--blocks-per-second", type=float, default=31.0)
    p.add_argument("--l-prime", type=int)
    p.add_argument("--P", type=int)
    p.add_argument("--C", type=int)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Output(args.json)
    try:
        args.config_data = _load_config(args.config)
        return args.func(args, out)
    except (TempestError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"tempest {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
