"""Format parsers: stream in, ``BlockSequence`` out."""

from __future__ import annotations

from pathlib import Path

from tempest.bytestream import ByteStream, FormatKind, detect_format, load_stream, strip_metadata
from tempest.errors import ParseError
from tempest.parsers.blocks import (
    BlockKind,
    BlockSequence,
    CompressedBlock,
    check_partition,
    reassemble,
)
from tempest.parsers.jpeg import DEFAULT_CHUNK_BYTES, jpeg_scan_segments
from tempest.parsers.mp3 import Mp3FrameHeader, mp3_scan_frames, parse_header, synth_mp3_stream
from tempest.parsers.ogg_opus import opus_extract_packets, opus_packet_duration

__all__ = [
    "BlockKind", "BlockSequence", "CompressedBlock", "Mp3FrameHeader",
    "check_partition", "reassemble", "jpeg_scan_segments", "mp3_scan_frames",
    "opus_extract_packets", "opus_packet_duration", "parse_header", "synth_mp3_stream",
    "parse_stream", "open_blocks", "prepare_stream",
]


def prepare_stream(s: ByteStream, fmt: FormatKind | None = None, keep_metadata: bool = False) -> ByteStream:
    """Detect (or force) the format and strip tags."""
    s = s.with_format(fmt or (s.format if s.format is not FormatKind.UNKNOWN else detect_format(s)))
    if s.format is FormatKind.UNKNOWN:
        raise ParseError(f"unrecognised format: {s.source_path or '<bytes>'}")
    return strip_metadata(s, keep=keep_metadata)


def parse_stream(s: ByteStream, target_chunk_bytes: int = DEFAULT_CHUNK_BYTES) -> BlockSequence:
    if s.format is FormatKind.MP3:
        return mp3_scan_frames(s)
    if s.format is FormatKind.OPUS_OGG:
        return opus_extract_packets(s)
    if s.format is FormatKind.JPEG:
        return jpeg_scan_segments(s, target_chunk_bytes)
    raise ParseError(f"no parser for format {s.format.value}")


def open_blocks(
    path: str | Path,
    fmt: FormatKind | None = None,
    keep_metadata: bool = False,
    target_chunk_bytes: int = DEFAULT_CHUNK_BYTES,
) -> BlockSequence:
    s = prepare_stream(load_stream(path), fmt, keep_metadata)
    return parse_stream(s, target_chunk_bytes)
