"""Whole-file loading, container sniffing and tag stripping."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from pathlib import Path

from tempest.errors import EmptyStream, IoError, MetadataError


class FormatKind(enum.Enum):
    MP3 = "mp3"
    OPUS_OGG = "opus"
    JPEG = "jpeg"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class ByteStream:
    data: bytes
    source_path: str = ""
    format: FormatKind = FormatKind.UNKNOWN

    def __len__(self) -> int:
        return len(self.data)

    def with_format(self, fmt: FormatKind) -> ByteStream:
        return replace(self, format=fmt)


ID3V2_HEADER_LEN = 10
ID3V1_TRAILER_LEN = 128


def load_stream(path: str | Path) -> ByteStream:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not data:
        raise EmptyStream(f"{path} is empty")
    return ByteStream(data=data, source_path=str(path))


def _looks_like_mp3_header(data: bytes, pos: int = 0) -> bool:
    from tempest.parsers.mp3 import parse_header

    return parse_header(data, pos) is not None


def detect_format(s: ByteStream) -> FormatKind:
    d = s.data
    if d[:2] == b"\xff\xd8":
        return FormatKind.JPEG
    if d[:4] == b"OggS":
        if len(d) >= 27:
            payload = 27 + d[26]
            if d[payload:payload + 8] == b"OpusHead":
                return FormatKind.OPUS_OGG
        return FormatKind.UNKNOWN
    if d[:3] == b"ID3" or _looks_like_mp3_header(d):
        return FormatKind.MP3
    return FormatKind.UNKNOWN


def id3v2_total_size(data: bytes, pos: int = 0) -> int:
    """Byte length of the ID3v2 tag starting at ``pos`` (header + body + footer)."""
    header = data[pos:pos + ID3V2_HEADER_LEN]
    if len(header) < ID3V2_HEADER_LEN or header[:3] != b"ID3":
        raise MetadataError("truncated ID3v2 header")
    if header[3] == 0xFF or header[4] == 0xFF:
        raise MetadataError("invalid ID3v2 version bytes")
    size_bytes = header[6:10]
    if any(b & 0x80 for b in size_bytes):
        raise MetadataError("ID3v2 size is not syncsafe")
    size = 0
    for b in size_bytes:
        size = (size << 7) | b
    total = ID3V2_HEADER_LEN + size
    if header[5] & 0x10:  # footer present (v2.4)
        total += ID3V2_HEADER_LEN
    if pos + total > len(data):
        raise MetadataError(f"ID3v2 tag declares {total} bytes, only {len(data) - pos} available")
    return total


def strip_metadata(s: ByteStream, keep: bool = False) -> ByteStream:
    """Remove ID3v2 prefixes and an ID3v1 trailer from MP3 streams.

    JPEG and Ogg streams pass through untouched; their parsers skip
    metadata segments and header packets themselves. ``keep=True`` turns
    this into a no-op for callers that want the tags to reach the parser.
    """
    if keep or s.format is not FormatKind.MP3:
        return s
    data = s.data
    start = 0
    while data[start:start + 3] == b"ID3":
        start += id3v2_total_size(data, start)
    end = len(data)
    if end - start >= ID3V1_TRAILER_LEN and data[end - ID3V1_TRAILER_LEN:end - ID3V1_TRAILER_LEN + 3] == b"TAG":
        end -= ID3V1_TRAILER_LEN
    if start == 0 and end == len(data):
        return s
    return replace(s, data=data[start:end])
