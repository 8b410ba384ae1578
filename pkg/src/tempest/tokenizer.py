"""Byte tokens per block, token-matrix files, and sequence-length metrics."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tempest.errors import EmptyInput, LabelError, NotApplicable, TempestError
from tempest.parsers.blocks import BlockSequence, CompressedBlock

PAD = 256
VOCAB = 257
DEFAULT_L_MAX = 144


@dataclass
class TruncationCounter:
    """Counts blocks cut short by ``L_max``; pass one in to collect stats."""
    blocks: int = 0
    bytes: int = 0


@dataclass(frozen=True)
class TokenizedBlock:
    tokens: np.ndarray  # int64, shape (L_max,)
    valid_len: int

    def to_bytes(self) -> bytes:
        return bytes(self.tokens[:self.valid_len].astype(np.uint8))


@dataclass
class TokenMatrix:
    tokens: np.ndarray  # int64, shape (rows, L_max)
    valid_len: np.ndarray  # int64, shape (rows,)
    label: np.ndarray | None = None
    duration_s: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label is not None:
            self.label = np.asarray(self.label, dtype=np.float64)
            check_label(self.label)

    @property
    def rows(self) -> int:
        return self.tokens.shape[0]

    @property
    def L_max(self) -> int:
        return self.tokens.shape[1]

    def row(self, i: int) -> TokenizedBlock:
        return TokenizedBlock(self.tokens[i], int(self.valid_len[i]))


def check_label(label: np.ndarray, atol: float = 1e-6) -> None:
    if label.ndim != 1 or np.any(label < 0) or not np.isfinite(label).all():
        raise LabelError("label must be a non-negative vector")
    if abs(label.sum() - 1.0) > atol:
        raise LabelError(f"label sums to {label.sum():.8f}, expected 1")


def one_hot(index: int, num_classes: int) -> np.ndarray:
    v = np.zeros(num_classes)
    v[index] = 1.0
    return v


def tokenize_bytes(data: bytes, L_max: int, counter: TruncationCounter | None = None) -> TokenizedBlock:
    if L_max < 1:
        raise ValueError("L_max must be >= 1")
    n = min(len(data), L_max)
    tokens = np.full(L_max, PAD, dtype=np.int64)
    tokens[:n] = np.frombuffer(data[:n], dtype=np.uint8)
    if counter is not None and len(data) > L_max:
        counter.blocks += 1
        counter.bytes += len(data) - L_max
    return TokenizedBlock(tokens, n)


def tokenize_block(b: CompressedBlock, L_max: int = DEFAULT_L_MAX,
                   counter: TruncationCounter | None = None) -> TokenizedBlock:
    return tokenize_bytes(b.data, L_max, counter)


def tokenize_stream(
    seq: BlockSequence,
    L_max: int = DEFAULT_L_MAX,
    max_blocks: int | None = None,
    label: np.ndarray | None = None,
    counter: TruncationCounter | None = None,
) -> TokenMatrix:
    """One row per block, keeping the first ``max_blocks`` blocks."""
    if len(seq) == 0:
        raise EmptyInput("block sequence is empty")
    blocks = seq.blocks if max_blocks is None else seq.blocks[:max_blocks]
    rows = [tokenize_block(b, L_max, counter) for b in blocks]
    return TokenMatrix(
        tokens=np.stack([r.tokens for r in rows]),
        valid_len=np.array([r.valid_len for r in rows], dtype=np.int64),
        label=label,
        duration_s=seq.total_duration_s,
    )


def compute_tps(seq: BlockSequence, L_prime: int = 1) -> float:
    """Model tokens per second of media (the [CLS] token is not counted)."""
    if seq.total_duration_s <= 0:
        raise NotApplicable("tokens-per-second needs a positive duration")
    return L_prime * len(seq) / seq.total_duration_s


def compute_tbr(L_prime: int, L_avg: float) -> float:
    if L_avg <= 0:
        raise ValueError("average block length must be positive")
    return L_prime / L_avg


# Token-matrix file, little endian:
#   magic "TMTX" | u32 version | u32 L_max | u32 rows | u32 num_classes | f64 duration_s
#   u16[rows * L_max] tokens, row major
#   f32[num_classes] label (absent when num_classes == 0)
_MAGIC = b"TMTX"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIId")


def write_token_matrix(path: str | Path, tm: TokenMatrix) -> None:
    label = tm.label
    num_classes = 0 if label is None else len(label)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, tm.L_max, tm.rows, num_classes, tm.duration_s))
        fh.write(tm.tokens.astype("<u2").tobytes())
        if label is not None:
            fh.write(label.astype("<f4").tobytes())


def read_token_matrix(path: str | Path) -> TokenMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TempestError(f"{path}: truncated token-matrix header")
    magic, version, L_max, rows, num_classes, duration = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise TempestError(f"{path}: not a token-matrix file")
    expected = _HEADER.size + 2 * rows * L_max + 4 * num_classes
    if len(raw) != expected:
        raise TempestError(f"{path}: expected {expected} bytes, found {len(raw)}")
    tokens = np.frombuffer(raw, dtype="<u2", count=rows * L_max, offset=_HEADER.size)
    tokens = tokens.reshape(rows, L_max).astype(np.int64)
    label = None
    if num_classes:
        label = np.frombuffer(raw, dtype="<f4", count=num_classes, offset=_HEADER.size + 2 * rows * L_max)
        label = label.astype(np.float64)
        label /= label.sum()  # undo f32 rounding drift
    valid = (tokens != PAD).sum(axis=1)
    return TokenMatrix(tokens=tokens, valid_len=valid, label=label, duration_s=duration)
