"""MPEG audio frame scanning.

Header layout (32 bits)::

    AAAAAAAA AAABBCCD EEEEFFGH IIJJKLMM

A sync, B version, C layer, D no-CRC flag, E bitrate index, F sample-rate
index, G padding, H private, I channel mode, J mode extension, K/L/M flags.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tempest.bytestream import ByteStream, FormatKind
from tempest.errors import ConfigError, NoFramesError
from tempest.parsers.blocks import BlockKind, BlockSequence, _Builder

# version bits -> label; 0b01 is reserved
_VERSIONS = {0b11: "1", 0b10: "2", 0b00: "2.5"}
# layer bits -> layer number; 0b00 is reserved
_LAYERS = {0b11: 1, 0b10: 2, 0b01: 3}

# kbps, index 1..14 (0 = free format, 15 = bad)
_BITRATES = {
    ("1", 1): (32, 64, 96, 128, 160, 192, 224, 256, 288, 320, 352, 384, 416, 448),
    ("1", 2): (32, 48, 56, 64, 80, 96, 112, 128, 160, 192, 224, 256, 320, 384),
    ("1", 3): (32, 40, 48, 56, 64, 80, 96, 112, 128, 160, 192, 224, 256, 320),
    ("2", 1): (32, 48, 56, 64, 80, 96, 112, 128, 144, 160, 176, 192, 224, 256),
    ("2", 2): (8, 16, 24, 32, 40, 48, 56, 64, 80, 96, 112, 128, 144, 160),
}
_BITRATES[("2", 3)] = _BITRATES[("2", 2)]
for _layer in (1, 2, 3):
    _BITRATES[("2.5", _layer)] = _BITRATES[("2", _layer)]

_SAMPLERATES = {
    "1": (44100, 48000, 32000),
    "2": (22050, 24000, 16000),
    "2.5": (11025, 12000, 8000),
}

_SAMPLES_PER_FRAME = {
    ("1", 1): 384, ("1", 2): 1152, ("1", 3): 1152,
    ("2", 1): 384, ("2", 2): 1152, ("2", 3): 576,
    ("2.5", 1): 384, ("2.5", 2): 1152, ("2.5", 3): 576,
}


@dataclass(frozen=True)
class Mp3FrameHeader:
    version: str
    layer: int
    bitrate_bps: int
    samplerate_hz: int
    padding: int
    samples_per_frame: int
    channel_mode: int = 0
    protected: bool = False

    @property
    def frame_length(self) -> int:
        if self.layer == 1:
            return (12 * self.bitrate_bps // self.samplerate_hz + self.padding) * 4
        return self.samples_per_frame // 8 * self.bitrate_bps // self.samplerate_hz + self.padding

    @property
    def duration_s(self) -> float:
        return self.samples_per_frame / self.samplerate_hz

    def same_stream(self, other: Mp3FrameHeader) -> bool:
        return (self.version, self.layer, self.samplerate_hz) == (other.version, other.layer, other.samplerate_hz)


def parse_header(data: bytes, pos: int = 0) -> Mp3FrameHeader | None:
    """Decode the 4-byte header at ``pos``; ``None`` if it is not a usable header."""
    if pos + 4 > len(data):
        return None
    b0, b1, b2, b3 = data[pos], data[pos + 1], data[pos + 2], data[pos + 3]
    if b0 != 0xFF or (b1 & 0xE0) != 0xE0:
        return None
    version = _VERSIONS.get((b1 >> 3) & 0b11)
    layer = _LAYERS.get((b1 >> 1) & 0b11)
    br_idx = b2 >> 4
    sr_idx = (b2 >> 2) & 0b11
    if version is None or layer is None or br_idx in (0, 15) or sr_idx == 3:
        return None
    return Mp3FrameHeader(
        version=version,
        layer=layer,
        bitrate_bps=_BITRATES[(version, layer)][br_idx - 1] * 1000,
        samplerate_hz=_SAMPLERATES[version][sr_idx],
        padding=(b2 >> 1) & 1,
        samples_per_frame=_SAMPLES_PER_FRAME[(version, layer)],
        channel_mode=b3 >> 6,
        protected=not (b1 & 1),
    )


def mp3_scan_frames(s: ByteStream) -> BlockSequence:
    """Split an MPEG audio stream into frames.

    A candidate header is accepted only if the frame it describes is followed
    by another compatible header or by the end of the stream. Bytes that fall
    outside accepted frames are kept as structural segments.
    """
    data = s.data
    n = len(data)
    out = _Builder(data)
    junk_start = 0
    pos = data.find(b"\xff")
    while 0 <= pos <= n - 4:
        h = parse_header(data, pos)
        if h is not None:
            end = pos + h.frame_length
            if end > n:
                if out.blocks:
                    out.dropped += 1
                    break
            else:
                nxt = parse_header(data, end) if end < n else None
                if end == n or (nxt is not None and nxt.same_stream(h)):
                    out.skip(junk_start, pos)
                    out.add([(pos, end - pos)], h.duration_s, BlockKind.MP3_FRAME, info=h)
                    junk_start = pos = end
                    continue
        pos = data.find(b"\xff", pos + 1)
    out.skip(junk_start, n)
    if not out.blocks:
        raise NoFramesError("no MPEG audio frames found")
    return out.build(FormatKind.MP3)


def _version_for_rate(samplerate_hz: int) -> tuple[int, int, str]:
    for bits, version in _VERSIONS.items():
        rates = _SAMPLERATES[version]
        if samplerate_hz in rates:
            return bits, rates.index(samplerate_hz), version
    raise ConfigError(f"illegal MPEG sample rate {samplerate_hz}")


def mp3_header_bytes(bitrate_bps: int, samplerate_hz: int, padding: int = 0) -> bytes:
    """A Layer III, mono, no-CRC header for the given rates."""
    vbits, sr_idx, version = _version_for_rate(samplerate_hz)
    table = _BITRATES[(version, 3)]
    if bitrate_bps % 1000 or bitrate_bps // 1000 not in table:
        raise ConfigError(f"illegal Layer III bitrate {bitrate_bps} for MPEG-{version}")
    br_idx = table.index(bitrate_bps // 1000) + 1
    return bytes((
        0xFF,
        0xE0 | (vbits << 3) | (0b01 << 1) | 1,
        (br_idx << 4) | (sr_idx << 2) | (padding << 1),
        0b11 << 6,
    ))


def synth_mp3_stream(
    frame_count: int,
    bitrate_bps: int,
    samplerate_hz: int,
    payload_seed: int,
    byte_range: tuple[int, int] = (0, 255),
) -> ByteStream:
    """Build a stream of Layer III frames with seeded random payloads.

    ``byte_range`` (inclusive) restricts the payload alphabet, which the
    synthetic classification datasets use to plant a class signal.
    """
    if frame_count < 1:
        raise ConfigError("frame_count must be >= 1")
    lo, hi = byte_range
    if not 0 <= lo <= hi <= 255:
        raise ConfigError(f"bad byte range {byte_range}")
    header = mp3_header_bytes(bitrate_bps, samplerate_hz)
    length = parse_header(header).frame_length
    rng = np.random.default_rng(payload_seed)
    payload = rng.integers(lo, hi + 1, size=(frame_count, length - 4), dtype=np.uint8)
    data = b"".join(header + row.tobytes() for row in payload)
    return ByteStream(data=data, source_path="<synth>", format=FormatKind.MP3)
