import os

import pytest
from hypothesis import given, strategies as st

from tempest.bytestream import ByteStream, FormatKind, detect_format, id3v2_total_size, load_stream, strip_metadata
from tempest.errors import EmptyStream, IoError, MetadataError
from tempest.fixtures import jpeg_bytes, ogg_opus_stream
from tempest.parsers import synth_mp3_stream


def test_load_three_bytes(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(bytes([1, 2, 3]))
    s = load_stream(p)
    assert len(s) == 3 and s.data == b"\x01\x02\x03" and s.source_path == str(p)


def test_load_empty_and_missing(tmp_path):
    p = tmp_path / "empty"
    p.write_bytes(b"")
    with pytest.raises(EmptyStream):
        load_stream(p)
    with pytest.raises(IoError):
        load_stream(tmp_path / "absent")


def test_load_matches_filesystem_size(mp3_files):
    for p in mp3_files[:3]:
        assert len(load_stream(p)) == os.path.getsize(p)


@pytest.mark.parametrize(
    "data, fmt",
    [
        (jpeg_bytes(), FormatKind.JPEG),
        (ogg_opus_stream([b"\x08" + b"x" * 20]), FormatKind.OPUS_OGG),
        (synth_mp3_stream(2, 128000, 44100, 0).data, FormatKind.MP3),
        (b"ID3\x04\x00\x00\x00\x00\x00\x00", FormatKind.MP3),
        (b"\x00\x00", FormatKind.UNKNOWN),
        (b"OggS" + bytes(40), FormatKind.UNKNOWN),
    ],
)
def test_detect_format(data, fmt):
    assert detect_format(ByteStream(data)) is fmt


@given(st.binary(min_size=1, max_size=64))
def test_detect_is_pure(data):
    assert detect_format(ByteStream(data)) is detect_format(ByteStream(data))


def _mp3(data: bytes) -> ByteStream:
    return ByteStream(data, format=FormatKind.MP3)


def test_strip_noop_without_tags():
    s = _mp3(synth_mp3_stream(3, 128000, 44100, 1).data)
    assert strip_metadata(s).data == s.data


def test_strip_empty_id3v2():
    body = synth_mp3_stream(2, 128000, 44100, 1).data
    tag = b"ID3\x03\x00\x00\x00\x00\x00\x00"
    assert strip_metadata(_mp3(tag + body)).data == body
    assert strip_metadata(_mp3(tag + body), keep=True).data == tag + body


def test_strip_syncsafe_size_and_footer():
    body = synth_mp3_stream(1, 128000, 44100, 1).data
    # syncsafe 0x00 0x00 0x01 0x7F = 255
    tag = b"ID3\x04\x00\x00\x00\x00\x01\x7f" + bytes(255)
    assert id3v2_total_size(tag + body) == 265
    footer_tag = b"ID3\x04\x00\x10\x00\x00\x00\x02" + b"ab" + b"3DI\x04\x00\x10\x00\x00\x00\x02"
    assert id3v2_total_size(footer_tag + body) == 22
    assert strip_metadata(_mp3(footer_tag + tag + body)).data == body


def test_strip_id3v1_trailer():
    body = synth_mp3_stream(2, 128000, 44100, 1).data
    trailer = b"TAG" + bytes(125)
    assert strip_metadata(_mp3(body + trailer)).data == body


@pytest.mark.parametrize(
    "tag",
    [
        b"ID3\x03\x00\x00\x00\x00\x00\x80",  # not syncsafe
        b"ID3\x03\x00\x00\x00\x00\x7f\x7f",  # longer than the file
        b"ID3\x03",  # truncated header
    ],
)
def test_malformed_id3v2(tag):
    with pytest.raises(MetadataError):
        strip_metadata(_mp3(tag + b"\xff\xfb\x90\x00"))


def test_strip_leaves_other_formats():
    data = jpeg_bytes()
    s = ByteStream(data, format=FormatKind.JPEG)
    assert strip_metadata(s) is s
