"""JPEG marker walking and entropy-coded segment splitting.

MCU boundaries are not byte aligned, so blocks are approximated: restart
intervals when the encoder emitted RSTn markers, otherwise fixed-size
chunks of the entropy-coded data that never split a stuffed ``FF 00`` pair.
"""

from __future__ import annotations

from tempest.bytestream import ByteStream, FormatKind
from tempest.errors import JpegParseError, ScanCorruptError
from tempest.parsers.blocks import BlockKind, BlockSequence, _Builder

SOI, EOI, SOS, DRI = 0xD8, 0xD9, 0xDA, 0xDD
RST0, RST7 = 0xD0, 0xD7
TEM = 0x01

# Markers that may legally follow an entropy-coded segment: tables, another
# scan (progressive), DNL, APPn and COM.
_AFTER_SCAN = {0xC4, 0xCC, 0xDA, 0xDB, 0xDC, 0xDD, 0xFE, EOI} | set(range(0xE0, 0xF0))

DEFAULT_CHUNK_BYTES = 144


def _entropy_spans(data: bytes, start: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]], int]:
    """Walk entropy-coded data from ``start``.

    Returns the payload spans between restart markers, the restart-marker
    spans, and the offset of the marker that ended the scan (``len(data)``
    if the stream is truncated).
    """
    n = len(data)
    spans: list[tuple[int, int]] = []
    markers: list[tuple[int, int]] = []
    span_start = i = start
    while True:
        j = data.find(b"\xff", i)
        if j < 0 or j + 1 >= n:
            spans.append((span_start, n))
            return spans, markers, n
        k = j + 1
        while k < n and data[k] == 0xFF:
            k += 1
        if k >= n:
            spans.append((span_start, j))
            return spans, markers, j
        code = data[k]
        if code == 0x00:
            if k != j + 1:
                raise ScanCorruptError(f"fill bytes before stuffed zero at {j}")
            i = k + 1
        elif RST0 <= code <= RST7:
            spans.append((span_start, j))
            markers.append((j, k + 1))
            span_start = i = k + 1
        elif code in _AFTER_SCAN:
            spans.append((span_start, j))
            return spans, markers, j
        else:
            raise ScanCorruptError(f"unexpected marker FF{code:02X} inside scan at byte {j}")


def _chunk(data: bytes, start: int, end: int, size: int) -> list[tuple[int, int]]:
    out = []
    while start < end:
        e = min(start + size, end)
        if e < end and data[e - 1] == 0xFF:
            e += 1  # keep FF 00 together
        out.append((start, e))
        start = e
    return out


def jpeg_scan_segments(s: ByteStream, target_chunk_bytes: int = DEFAULT_CHUNK_BYTES) -> BlockSequence:
    if target_chunk_bytes < 1:
        raise ValueError("target_chunk_bytes must be positive")
    data = s.data
    n = len(data)
    if data[:2] != b"\xff\xd8":
        raise JpegParseError("missing SOI marker")
    out = _Builder(data)
    out.skip(0, 2)
    pos = 2
    saw_sos = False
    restart_interval = 0
    while pos < n:
        if data[pos] != 0xFF:
            raise JpegParseError(f"expected marker at byte {pos}")
        m = pos
        while m < n and data[m] == 0xFF:
            m += 1
        if m >= n:
            break
        code = data[m]
        if code == EOI:
            out.skip(pos, m + 1)
            pos = m + 1
            break
        if code == TEM or RST0 <= code <= RST7:
            out.skip(pos, m + 1)
            pos = m + 1
            continue
        if code == 0x00 or code == SOI:
            raise JpegParseError(f"invalid marker FF{code:02X} at byte {m}")
        if m + 3 > n:
            raise JpegParseError(f"truncated marker segment at byte {pos}")
        seg_len = (data[m + 1] << 8) | data[m + 2]
        end = m + 1 + seg_len
        if seg_len < 2 or end > n:
            raise JpegParseError(f"bad segment length {seg_len} at byte {pos}")
        if code == DRI and seg_len >= 4:
            restart_interval = (data[m + 3] << 8) | data[m + 4]
        out.skip(pos, end)
        pos = end
        if code != SOS:
            continue

        saw_sos = True
        spans, markers, stop = _entropy_spans(data, end)
        if markers:
            pieces = [sp for sp in spans if sp[1] > sp[0]]
        else:
            pieces = _chunk(data, spans[0][0], spans[0][1], target_chunk_bytes)
        boundaries = sorted([(a, b, True) for a, b in pieces] + [(a, b, False) for a, b in markers])
        for a, b, is_block in boundaries:
            if is_block:
                out.add([(a, b - a)], 0.0, BlockKind.JPEG_SEGMENT, info=restart_interval)
            else:
                out.skip(a, b)
        pos = stop
    out.skip(pos, n)
    if not saw_sos:
        raise JpegParseError("no SOS marker")
    return out.build(FormatKind.JPEG, duration=0.0)
