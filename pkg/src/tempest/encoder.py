"""Reference encoder command used when ``TEMPEST_ENCODER_CMD`` is unset.

    python -m tempest.encoder --codec mp3 --bitrate 32000 --samplerate 44100 in.wav out.mp3

MP3 goes through LAME (``lameenc``); LAME snaps the request to the nearest
legal frame bit rate and may resample. Opus goes through libsndfile, which
only exposes a compression level, so the bit rate is approximate there.
Input is anything libsndfile can read.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

_OPUS_RATES = (8000, 12000, 16000, 24000, 48000)


def _read(path: str):
    import soundfile as sf

    audio, sr = sf.read(path, dtype="float32", always_2d=True)
    return audio, sr


def _resample(audio: np.ndarray, sr: int, target: int) -> np.ndarray:
    if sr == target:
        return audio
    n = int(round(audio.shape[0] * target / sr))
    t_old = np.arange(audio.shape[0]) / sr
    t_new = np.arange(n) / target
    return np.stack([np.interp(t_new, t_old, audio[:, c]) for c in range(audio.shape[1])], axis=1).astype(np.float32)


def encode_mp3(audio: np.ndarray, sr: int, bitrate_bps: int, out_rate: int | None, quality: int = 2) -> bytes:
    import lameenc

    pcm = (np.clip(audio, -1.0, 1.0) * 32767).astype("<i2")
    enc = lameenc.Encoder()
    enc.set_bit_rate(max(8, bitrate_bps // 1000))
    enc.set_in_sample_rate(sr)
    if out_rate:
        enc.set_out_sample_rate(out_rate)
    enc.set_channels(pcm.shape[1])
    enc.set_quality(quality)
    return bytes(enc.encode(pcm.tobytes()) + enc.flush())


def encode_opus(audio: np.ndarray, sr: int, bitrate_bps: int, out_path: str) -> None:
    import soundfile as sf

    target = min(_OPUS_RATES, key=lambda r: abs(r - sr))
    audio = _resample(audio, sr, target)
    # libsndfile maps compression level 0..1 onto its Opus bit-rate range
    level = float(np.clip(1.0 - (bitrate_bps - 6000) / (256000 - 6000), 0.0, 1.0))
    sf.write(out_path, audio, target, format="OGG", subtype="OPUS", compression_level=level)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="tempest.encoder", description=__doc__.splitlines()[0])
    ap.add_argument("--codec", choices=("mp3", "opus"), default="mp3")
    ap.add_argument("--bitrate", type=int, required=True, help="bits per second")
    ap.add_argument("--samplerate", type=int, default=0, help="output rate in Hz (0 = encoder's choice)")
    ap.add_argument("input")
    ap.add_argument("output")
    args = ap.parse_args(argv)
    try:
        audio, sr = _read(args.input)
        if args.codec == "mp3":
            with open(args.output, "wb") as fh:
                fh.write(encode_mp3(audio, sr, args.bitrate, args.samplerate or None))
        else:
            encode_opus(audio, sr, args.bitrate, args.output)
    except Exception as exc:  # noqa: BLE001 - report any encoder failure as exit 1
        print(f"encoder: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
