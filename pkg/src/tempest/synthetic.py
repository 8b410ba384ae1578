"""Synthetic token datasets with known answers.

``byte_pattern_dataset``: class 0 blocks use bytes 0..127, class 1 blocks use
128..255. Any working classifier separates them.

``dialect_dataset``: each example has a hidden class and is rendered in
several "dialects", stand-ins for one clip encoded at several bit rates.
Every rendering draws its own noise, so the views agree on the class but
not on the bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tempest.tokenizer import PAD, TokenMatrix, one_hot


@dataclass
class Example:
    variants: list[TokenMatrix]
    label: np.ndarray
    key: str = ""
    fold: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def tokens(self) -> TokenMatrix:
        return self.variants[0]


def _matrix(blocks: list[np.ndarray], L_max: int, label: np.ndarray, seconds_per_block: float) -> TokenMatrix:
    tokens = np.full((len(blocks), L_max), PAD, dtype=np.int64)
    valid = np.zeros(len(blocks), dtype=np.int64)
    for i, b in enumerate(blocks):
        tokens[i, :len(b)] = b
        valid[i] = len(b)
    return TokenMatrix(tokens=tokens, valid_len=valid, label=label, duration_s=len(blocks) * seconds_per_block)


def byte_pattern_dataset(
    n: int = 64,
    rows: int = 4,
    L_max: int = 16,
    seed: int = 0,
    min_len: int | None = None,
    seconds_per_block: float = 0.036,
) -> list[Example]:
    """Balanced two-class set; block lengths vary in ``min_len..L_max`` so pads appear."""
    rng = np.random.default_rng(seed)
    min_len = L_max // 2 if min_len is None else min_len
    out = []
    for i in range(n):
        c = i % 2
        lo = 0 if c == 0 else 128
        blocks = [rng.integers(lo, lo + 128, size=int(rng.integers(min_len, L_max + 1))) for _ in range(rows)]
        label = one_hot(c, 2)
        out.append(Example([_matrix(blocks, L_max, label, seconds_per_block)], label, key=f"bp{seed}-{i}"))
    rng.shuffle(out)
    return out


# Each dialect maps a "content" byte through its own fixed permutation.
def _dialect_tables(count: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(10_000 + seed)
    tables = [np.arange(256)]
    tables += [rng.permutation(256) for _ in range(count - 1)]
    return tables


def dialect_dataset(
    n: int = 128,
    rows: int = 4,
    L_max: int = 16,
    seed: int = 0,
    dialects: int = 2,
    signal: float = 0.7,
    seconds_per_block: float = 0.036,
) -> list[Example]:
    """Noisy two-class set rendered in ``dialects`` views per example.

    A content byte comes from the example's class half (0..127 or 128..255)
    with probability ``signal`` and from the other half otherwise; each view
    draws its own content and maps it through its dialect's byte table.
    """
    rng = np.random.default_rng(seed)
    tables = _dialect_tables(dialects, seed)
    out = []
    for i in range(n):
        c = i % 2
        label = one_hot(c, 2)
        views = []
        for table in tables:
            blocks = []
            for _ in range(rows):
                own = rng.random(L_max) < signal
                half = np.where(own, c, 1 - c)
                content = half * 128 + rng.integers(0, 128, size=L_max)
                blocks.append(table[content])
            views.append(_matrix(blocks, L_max, label, seconds_per_block))
        out.append(Example(views, label, key=f"dl{seed}-{i}"))
    rng.shuffle(out)
    return out
