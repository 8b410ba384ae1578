"""Ogg page demuxing and Opus packet extraction."""

from __future__ import annotations

import struct

from tempest.bytestream import ByteStream, FormatKind
from tempest.errors import OggParseError
from tempest.parsers.blocks import BlockKind, BlockSequence, Span, _Builder

PAGE_HEADER_LEN = 27
_FLAG_CONTINUED = 0x01
_FLAG_BOS = 0x02
_MAX_PACKET_MS = 120.0


def _crc_table() -> list[int]:
    table = []
    for i in range(256):
        r = i << 24
        for _ in range(8):
            r = ((r << 1) ^ 0x04C11DB7) if r & 0x80000000 else (r << 1)
        table.append(r & 0xFFFFFFFF)
    return table


_CRC_TABLE = _crc_table()


def ogg_crc(page: bytes) -> int:
    """CRC-32 as used by Ogg (poly 0x04C11DB7, zero init, no reflection)."""
    crc = 0
    t = _CRC_TABLE
    for b in page:
        crc = ((crc << 8) & 0xFFFFFFFF) ^ t[((crc >> 24) ^ b) & 0xFF]
    return crc


def opus_frame_ms(toc: int) -> float:
    config = toc >> 3
    if config < 12:  # SILK-only
        return (10.0, 20.0, 40.0, 60.0)[config % 4]
    if config < 16:  # hybrid
        return (10.0, 20.0)[config % 2]
    return (2.5, 5.0, 10.0, 20.0)[config % 4]  # CELT-only


def opus_packet_duration(packet: bytes) -> float | None:
    """Seconds of audio in one Opus packet, from its TOC byte; ``None`` if malformed."""
    if not packet:
        return None
    toc = packet[0]
    code = toc & 0b11
    if code == 0:
        frames = 1
    elif code in (1, 2):
        frames = 2
        if code == 1 and (len(packet) - 1) % 2:
            return None
    else:
        if len(packet) < 2:
            return None
        frames = packet[1] & 0x3F
        if frames == 0:
            return None
    ms = opus_frame_ms(toc) * frames
    if ms > _MAX_PACKET_MS:
        return None
    return ms / 1000.0


def opus_extract_packets(s: ByteStream, verify_crc: bool = True) -> BlockSequence:
    """Demux the first Opus logical stream into one block per audio packet.

    The two header packets (``OpusHead``, ``OpusTags``) are excluded, as are
    pages of other logical streams. A packet whose continuation page is
    missing is dropped and counted in ``BlockSequence.dropped``.
    """
    data = s.data
    n = len(data)
    out = _Builder(data)
    opus_serial = None
    packet_no = 0
    pending: list[Span] = []

    def drop(pieces: list[Span]) -> None:
        for o, ln in pieces:
            out.skip(o, o + ln)
        out.dropped += 1

    def finish(pieces: list[Span]) -> None:
        nonlocal packet_no
        packet_no += 1
        payload = b"".join(data[o:o + ln] for o, ln in pieces)
        if packet_no == 1:
            if not payload.startswith(b"OpusHead"):
                raise OggParseError("first packet is not OpusHead")
        elif packet_no == 2:
            if not payload.startswith(b"OpusTags"):
                raise OggParseError("second packet is not OpusTags")
        else:
            dur = opus_packet_duration(payload)
            if dur is not None:
                out.add(pieces, dur, BlockKind.OPUS_PACKET)
                return
            if not payload:
                return
            out.dropped += 1
        for o, ln in pieces:
            out.skip(o, o + ln)

    pos = 0
    while pos < n:
        if data[pos:pos + 4] != b"OggS":
            raise OggParseError(f"bad page magic at byte {pos}")
        if pos + PAGE_HEADER_LEN > n:
            raise OggParseError(f"truncated page header at byte {pos}")
        version, flags, _granule, serial, _seq, crc, nsegs = struct.unpack_from("<BBqIIIB", data, pos + 4)
        if version != 0:
            raise OggParseError(f"unsupported Ogg version {version}")
        body = pos + PAGE_HEADER_LEN + nsegs
        if body > n:
            raise OggParseError(f"truncated segment table at byte {pos}")
        lacing = data[pos + PAGE_HEADER_LEN:body]
        page_end = body + sum(lacing)
        if page_end > n:
            raise OggParseError(f"truncated page body at byte {pos}")
        if verify_crc:
            page = bytearray(data[pos:page_end])
            page[22:26] = b"\0\0\0\0"
            if ogg_crc(page) != crc:
                raise OggParseError(f"CRC mismatch in page at byte {pos}")
        out.skip(pos, body)

        if opus_serial is None and flags & _FLAG_BOS and data[body:body + 8] == b"OpusHead":
            opus_serial = serial
        if serial != opus_serial:
            out.skip(body, page_end)
            pos = page_end
            continue

        if flags & _FLAG_CONTINUED:
            if not pending:
                # continuation of a packet we never saw the start of
                first = next((i for i, v in enumerate(lacing) if v < 255), len(lacing) - 1)
                cut = body + sum(lacing[:first + 1])
                drop([(body, cut - body)])
                cursor, lacing = cut, lacing[first + 1:]
            else:
                cursor = body
        else:
            if pending:
                drop(pending)
                pending = []
            cursor = body

        for v in lacing:
            if v:
                if pending and sum(pending[-1]) == cursor:
                    pending[-1] = (pending[-1][0], pending[-1][1] + v)
                else:
                    pending.append((cursor, v))
                cursor += v
            if v < 255:
                finish(pending)
                pending = []
        pos = page_end

    if pending:
        drop(pending)
    if opus_serial is None:
        raise OggParseError("no Opus logical stream")
    return out.build(FormatKind.OPUS_OGG)
