"""Fixture generators: encoder-made corpora, hand-built Ogg pages, toy datasets.

The encoder corpora need the ``encode`` extra (lameenc, soundfile); the
rest is dependency free.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from tempest.parsers.mp3 import synth_mp3_stream
from tempest.parsers.ogg_opus import ogg_crc

CORPUS_MP3_KBPS = (20, 26, 32)


def chirp_signal(seconds: float, samplerate: int, seed: int, channels: int = 1) -> np.ndarray:
    """Chirp plus noise in [-1, 1], shape (samples, channels)."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * samplerate)) / samplerate
    f0 = 200 + 400 * rng.random()
    chirp = np.sin(2 * np.pi * (f0 * t + 150 * t ** 2))
    x = 0.4 * chirp[:, None] + 0.1 * rng.standard_normal((len(t), channels))
    return np.clip(x, -1, 1).astype(np.float32)


def encode_mp3_bytes(audio: np.ndarray, samplerate: int, kbps: int, out_rate: int | None = None) -> bytes:
    from tempest.encoder import encode_mp3

    return encode_mp3(audio, samplerate, kbps * 1000, out_rate)


def encode_opus_bytes(audio: np.ndarray, samplerate: int, compression_level: float = 0.5) -> bytes:
    import soundfile as sf

    buf = io.BytesIO()
    sf.write(buf, audio, samplerate, format="OGG", subtype="OPUS", compression_level=compression_level)
    return buf.getvalue()


def mp3_corpus(out_dir: str | Path, per_rate: int = 7, seconds: float = 2.0) -> list[Path]:
    """``per_rate`` files at each of 20/26/32 kbps, varying input rate and channels."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    in_rates = (44100, 48000, 32000, 22050, 16000)
    out_rates = (None, 32000, None, 44100, None, 24000, None)
    paths = []
    for kbps in CORPUS_MP3_KBPS:
        for i in range(per_rate):
            sr = in_rates[i % len(in_rates)]
            ch = 1 + (i % 2)
            audio = chirp_signal(seconds, sr, seed=kbps * 100 + i, channels=ch)
            data = encode_mp3_bytes(audio, sr, kbps, out_rates[i % len(out_rates)])
            p = out_dir / f"clip_{kbps}k_{i:02d}.mp3"
            p.write_bytes(data)
            paths.append(p)
    return paths


def opus_corpus(out_dir: str | Path, count: int = 10, seconds: float = 2.0) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        sr = (48000, 16000, 24000)[i % 3]
        audio = chirp_signal(seconds, sr, seed=500 + i, channels=1 + (i % 2))
        p = out_dir / f"clip_{i:02d}.opus"
        p.write_bytes(encode_opus_bytes(audio, sr, compression_level=0.2 + 0.6 * (i % 4) / 3))
        paths.append(p)
    return paths


def ogg_page(
    segments: list[int],
    body: bytes,
    serial: int = 1,
    seqno: int = 0,
    granule: int = 0,
    flags: int = 0,
) -> bytes:
    """One Ogg page with a valid CRC; ``segments`` are the lacing values."""
    if sum(segments) != len(body):
        raise ValueError("lacing values do not add up to the body length")
    header = b"OggS" + struct.pack("<BBqIIIB", 0, flags, granule, serial, seqno, 0, len(segments))
    page = bytearray(header + bytes(segments) + body)
    page[22:26] = struct.pack("<I", ogg_crc(page))
    return bytes(page)


def lacing(n: int) -> list[int]:
    return [255] * (n // 255) + [n % 255]


def opus_head(channels: int = 1) -> bytes:
    return b"OpusHead" + struct.pack("<BBHIhB", 1, channels, 312, 48000, 0, 0)


def opus_tags() -> bytes:
    vendor = b"tempest"
    return b"OpusTags" + struct.pack("<I", len(vendor)) + vendor + struct.pack("<I", 0)


def ogg_opus_stream(packets: list[bytes], packets_per_page: int = 4, serial: int = 7) -> bytes:
    """A minimal Ogg Opus file: header pages, then ``packets`` grouped onto pages."""
    pages = [
        ogg_page(lacing(19), opus_head(), serial, 0, flags=0x02),
        ogg_page(lacing(len(opus_tags())), opus_tags(), serial, 1),
    ]
    seq = 2
    for i in range(0, len(packets), packets_per_page):
        group = packets[i:i + packets_per_page]
        segs = [v for p in group for v in lacing(len(p))]
        last = i + packets_per_page >= len(packets)
        pages.append(ogg_page(segs, b"".join(group), serial, seq, granule=960 * (i + len(group)),
                              flags=0x04 if last else 0))
        seq += 1
    return b"".join(pages)


def jpeg_bytes(size: tuple[int, int] = (8, 8), quality: int = 75, seed: int = 0, **save_kw) -> bytes:
    from PIL import Image

    rng = np.random.default_rng(seed)
    w, h = size
    img = Image.fromarray((rng.random((h, w, 3)) * 255).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, "JPEG", quality=quality, **save_kw)
    return buf.getvalue()


def toy_mp3_dataset(out_dir: str | Path, per_class: int = 16, frames: int = 8, seed: int = 0,
                    bitrate_bps: int = 32000, samplerate_hz: int = 32000) -> Path:
    """Two-class synthetic MP3 files (payload bytes 0..127 vs 128..255) plus a manifest.

    Every fourth file of each class lands in the ``test`` split. Returns the
    manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [{"num_classes": 2, "task": "single_label"}]
    for c, rng_bytes in enumerate(((0, 127), (128, 255))):
        for i in range(per_class):
            s = synth_mp3_stream(frames, bitrate_bps, samplerate_hz, seed * 10_000 + c * 1000 + i, rng_bytes)
            name = f"class{c}_{i:03d}.mp3"
            (out_dir / name).write_bytes(s.data)
            split = "test" if i % 4 == 3 else "train"
            records.append({"path": name, "label": c, "split": split, "fold": i % 5})
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("".join(json.dumps(r) + "\n" for r in records))
    return manifest
