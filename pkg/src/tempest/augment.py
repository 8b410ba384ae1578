"""Compressed-domain augmentation.

Block CutMix works directly on token matrices. Bit-rate augmentation
re-encodes the source audio with an external encoder; the encoder is any
command line built from a template with ``{in}``, ``{out}``, ``{bitrate}``
(bits/s), ``{kbps}``, ``{samplerate}`` and ``{codec}`` placeholders.
"""

from __future__ import annotations

import enum
import hashlib
import os
import shlex
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tempest.bytestream import ByteStream, FormatKind, detect_format, load_stream
from tempest.errors import ConfigError, ShapeError, TempestError, ToolNotFound, TranscodeError
from tempest.tokenizer import TokenMatrix

ENCODER_ENV = "TEMPEST_ENCODER_CMD"
DEFAULT_ENCODER_CMD = (
    f"{shlex.quote(sys.executable)} -m tempest.encoder --codec {{codec}} "
    "--bitrate {bitrate} --samplerate {samplerate} {in} {out}"
)
DEFAULT_TRAIN_RATES = (20_000, 26_000, 32_000)
DEFAULT_INFER_RATES = (23_000, 26_000, 29_000, 32_000)


class Codec(enum.Enum):
    MP3 = "mp3"
    OPUS = "opus"

    @property
    def format(self) -> FormatKind:
        return FormatKind.MP3 if self is Codec.MP3 else FormatKind.OPUS_OGG

    @property
    def suffix(self) -> str:
        return ".mp3" if self is Codec.MP3 else ".opus"


# Encoder-accepted target rates. ABR/VBR encoders take rates between the
# CBR table entries, so only the range is enforced.
_RATE_LIMITS = {Codec.MP3: (8_000, 320_000), Codec.OPUS: (6_000, 510_000)}


def rng_from(seed: int | np.random.Generator) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class BitrateSet:
    rates_bps: tuple[int, ...]
    codec: Codec = Codec.MP3

    def __post_init__(self):
        object.__setattr__(self, "rates_bps", tuple(int(r) for r in self.rates_bps))
        if not self.rates_bps:
            raise ConfigError("bit-rate set is empty")
        lo, hi = _RATE_LIMITS[self.codec]
        bad = [r for r in self.rates_bps if not lo <= r <= hi]
        if bad:
            raise ConfigError(f"rates {bad} outside {lo}..{hi} for {self.codec.value}")


def sample_bitrate(rates: BitrateSet, rng_seed: int | np.random.Generator) -> int:
    rng = rng_from(rng_seed)
    return rates.rates_bps[int(rng.integers(len(rates.rates_bps)))]


def _check_pair(a: TokenMatrix, b: TokenMatrix) -> None:
    if a.tokens.shape != b.tokens.shape:
        raise ShapeError(f"token shapes differ: {a.tokens.shape} vs {b.tokens.shape}")
    la, lb = a.label, b.label
    if (la is None) != (lb is None) or (la is not None and la.shape != lb.shape):
        raise ShapeError("labels differ in presence or class count")


def cutmix_span(rows: int, rng: np.random.Generator, max_fraction: float) -> tuple[int, int]:
    """Uniform span length in ``0..floor(max_fraction * rows)``, then a uniform start."""
    k = int(rng.integers(int(np.floor(max_fraction * rows + 1e-9)) + 1))
    p = int(rng.integers(rows - k + 1))
    return p, p + k


def block_cutmix(
    a: TokenMatrix,
    b: TokenMatrix,
    rng_seed: int | np.random.Generator,
    max_fraction: float = 0.5,
    span: tuple[int, int] | None = None,
    scattered: bool = False,
) -> TokenMatrix:
    """Replace a span of ``a``'s blocks with ``b``'s blocks at the same rows.

    The label becomes ``(1 - f) * label_a + f * label_b`` where ``f`` is the
    replaced fraction of rows. ``scattered=True`` picks the rows at random
    instead of as one contiguous span.
    """
    _check_pair(a, b)
    if not 0 < max_fraction <= 1:
        raise ConfigError("max_fraction must be in (0, 1]")
    rows = a.rows
    rng = rng_from(rng_seed)
    if span is None:
        p, q = cutmix_span(rows, rng, max_fraction)
    else:
        p, q = span
        if not 0 <= p <= q <= rows:
            raise ShapeError(f"span {span} outside 0..{rows}")
    idx = np.arange(p, q)
    if scattered:
        idx = np.sort(rng.choice(rows, size=q - p, replace=False))
    tokens = a.tokens.copy()
    valid = a.valid_len.copy()
    tokens[idx] = b.tokens[idx]
    valid[idx] = b.valid_len[idx]
    f = len(idx) / rows
    label = None if a.label is None else (1.0 - f) * a.label + f * b.label
    return TokenMatrix(tokens=tokens, valid_len=valid, label=label, duration_s=a.duration_s,
                       meta={**a.meta, "cutmix_fraction": f, "cutmix_rows": idx.tolist()})


@dataclass(frozen=True)
class TranscodeJob:
    input_path: str
    codec: Codec
    bitrate_bps: int
    samplerate_hz: int
    output_path: str


def encoder_template(template: str | None = None) -> str:
    return template or os.environ.get(ENCODER_ENV) or DEFAULT_ENCODER_CMD


def _render(template: str, **values) -> list[str]:
    try:
        return [part.format(**values) for part in shlex.split(template)]
    except (KeyError, IndexError, ValueError) as exc:
        raise ConfigError(f"bad command template {template!r}: {exc}") from exc


def _run(argv: list[str], what: str) -> None:
    if shutil.which(argv[0]) is None and not Path(argv[0]).is_file():
        raise ToolNotFound(f"{what} executable not found: {argv[0]}")
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise ToolNotFound(f"cannot start {argv[0]}: {exc}") from exc
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout).strip().splitlines()[-1:] or [""]
        raise TranscodeError(f"{what} exited with {proc.returncode}: {tail[0]}")


def run_transcode(job: TranscodeJob, template: str | None = None, pre_hook: str | None = None) -> ByteStream:
    """Encode ``job.input_path`` and return the validated result.

    ``pre_hook`` is an optional ``{in} {out}`` command applied to the
    waveform first (the place to plug in waveform-domain augmentation).
    """
    src = job.input_path
    with tempfile.TemporaryDirectory() as tmp:
        if pre_hook:
            hooked = str(Path(tmp) / ("hooked" + Path(src).suffix))
            _run(_render(pre_hook, **{"in": src, "out": hooked}), "pre-transcode hook")
            src = hooked
        argv = _render(
            encoder_template(template),
            **{"in": src, "out": job.output_path, "bitrate": job.bitrate_bps,
               "kbps": job.bitrate_bps // 1000, "samplerate": job.samplerate_hz, "codec": job.codec.value},
        )
        _run(argv, "encoder")
    try:
        s = load_stream(job.output_path)
    except TempestError as exc:
        raise TranscodeError(f"encoder produced no usable output: {exc}") from exc
    fmt = detect_format(s)
    if fmt is not job.codec.format:
        raise TranscodeError(f"encoder output detected as {fmt.value}, expected {job.codec.value}")
    return s.with_format(fmt)


class TranscodeCache:
    """Content-addressed store of encoded files, so epochs do not re-encode."""

    def __init__(self, root: str | Path, template: str | None = None, pre_hook: str | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.template = encoder_template(template)
        self.pre_hook = pre_hook

    def key(self, input_path: str | Path, codec: Codec, bitrate_bps: int, samplerate_hz: int) -> str:
        h = hashlib.sha256(Path(input_path).read_bytes())
        h.update(f"|{codec.value}|{bitrate_bps}|{samplerate_hz}|{self.template}|{self.pre_hook}".encode())
        return h.hexdigest()

    def get(self, input_path: str | Path, codec: Codec, bitrate_bps: int, samplerate_hz: int) -> ByteStream:
        out = self.root / (self.key(input_path, codec, bitrate_bps, samplerate_hz) + codec.suffix)
        if out.exists():
            s = load_stream(out)
            return s.with_format(detect_format(s))
        partial = out.with_name(out.stem + ".part" + codec.suffix)
        job = TranscodeJob(str(input_path), codec, bitrate_bps, samplerate_hz, str(partial))
        s = run_transcode(job, self.template, self.pre_hook)
        os.replace(partial, out)
        return ByteStream(data=s.data, source_path=str(out), format=s.format)
