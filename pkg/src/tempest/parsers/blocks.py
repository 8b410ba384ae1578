"""Block containers shared by the format parsers.

A parser turns a stream into a ``BlockSequence``: the media blocks plus every
byte it did *not* put in a block (container headers, markers, resync junk),
recorded as structural segments. Together they tile the stream exactly, which
is what :func:`reassemble` and :func:`check_partition` verify.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

from tempest.bytestream import FormatKind

Span = tuple[int, int]  # (offset, length)


class BlockKind(enum.Enum):
    MP3_FRAME = "mp3_frame"
    OPUS_PACKET = "opus_packet"
    JPEG_SEGMENT = "jpeg_segment"


@dataclass(frozen=True)
class CompressedBlock:
    offset: int
    length: int
    data: bytes
    duration_s: float
    kind: BlockKind
    # Where the payload lives in the stream. An Ogg packet that crosses a
    # page boundary is split around the next page header.
    pieces: tuple[Span, ...] = ()
    info: Any = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.data) != self.length:
            raise ValueError(f"block data has {len(self.data)} bytes, length says {self.length}")
        if not self.pieces:
            object.__setattr__(self, "pieces", ((self.offset, self.length),))
        if self.kind is BlockKind.JPEG_SEGMENT:
            if self.duration_s != 0:
                raise ValueError("image blocks carry no duration")
        elif not self.duration_s > 0:
            raise ValueError("audio blocks need a positive duration")

    @property
    def end(self) -> int:
        off, n = self.pieces[-1]
        return off + n


@dataclass(frozen=True)
class BlockSequence:
    blocks: tuple[CompressedBlock, ...]
    total_duration_s: float
    source_format: FormatKind
    stream_length: int
    structural: tuple[tuple[int, bytes], ...] = ()
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    @property
    def mean_block_length(self) -> float:
        if not self.blocks:
            return 0.0
        return sum(b.length for b in self.blocks) / len(self.blocks)


def _segments(seq: BlockSequence) -> list[tuple[int, bytes]]:
    segs = list(seq.structural)
    for b in seq.blocks:
        pos = 0
        for off, n in b.pieces:
            segs.append((off, b.data[pos:pos + n]))
            pos += n
    segs.sort(key=lambda s: s[0])
    return segs


def check_partition(seq: BlockSequence) -> None:
    """Raise ``ValueError`` unless blocks are ordered, disjoint and in bounds,
    and blocks plus structural segments tile ``[0, stream_length)``."""
    prev_end = 0
    prev_off = -1
    for b in seq.blocks:
        if b.offset <= prev_off:
            raise ValueError(f"block offsets not increasing at {b.offset}")
        if b.offset < prev_end:
            raise ValueError(f"block at {b.offset} overlaps previous block ending at {prev_end}")
        if b.pieces[0][0] != b.offset or sum(n for _, n in b.pieces) != b.length:
            raise ValueError(f"block at {b.offset} has inconsistent pieces")
        if b.end > seq.stream_length:
            raise ValueError(f"block at {b.offset} runs past end of stream")
        prev_off, prev_end = b.offset, b.end
    cursor = 0
    for off, chunk in _segments(seq):
        if off != cursor:
            kind = "gap" if off > cursor else "overlap"
            raise ValueError(f"{kind} at byte {cursor} (next segment at {off})")
        cursor += len(chunk)
    if cursor != seq.stream_length:
        raise ValueError(f"segments cover {cursor} of {seq.stream_length} bytes")


def reassemble(seq: BlockSequence) -> bytes:
    check_partition(seq)
    return b"".join(chunk for _, chunk in _segments(seq))


class _Builder:
    """Accumulates blocks and structural bytes while a parser walks a stream."""

    def __init__(self, data: bytes):
        self.data = data
        self.blocks: list[CompressedBlock] = []
        self.structural: list[tuple[int, bytes]] = []
        self.dropped = 0

    def skip(self, start: int, end: int) -> None:
        if end > start:
            self.structural.append((start, self.data[start:end]))

    def add(self, pieces: list[Span], duration_s: float, kind: BlockKind, info=None) -> None:
        payload = b"".join(self.data[o:o + n] for o, n in pieces)
        self.blocks.append(CompressedBlock(
            offset=pieces[0][0], length=len(payload), data=payload,
            duration_s=duration_s, kind=kind, pieces=tuple(pieces), info=info,
        ))

    def build(self, fmt: FormatKind, duration: float | None = None) -> BlockSequence:
        if duration is None:
            duration = sum(b.duration_s for b in self.blocks)
        return BlockSequence(
            blocks=tuple(self.blocks), total_duration_s=duration, source_format=fmt,
            stream_length=len(self.data), structural=tuple(self.structural), dropped=self.dropped,
        )
