"""Write the encoder corpora (MP3 at 20/26/32 kbps, Ogg/Opus, JPEG) and a toy labelled MP3 dataset."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from tempest import fixtures
from tempest.parsers import open_blocks

from _common import parse_config


@dataclass
class FixtureConfig:
    out: str = "fixtures"
    mp3_per_rate: int = 7
    opus_count: int = 10
    seconds: float = 2.0
    toy_per_class: int = 16
    seed: int = 0


def main() -> None:
    cfg = parse_config(FixtureConfig, __doc__)
    root = Path(cfg.out)
    mp3 = fixtures.mp3_corpus(root / "mp3", cfg.mp3_per_rate, cfg.seconds)
    opus = fixtures.opus_corpus(root / "opus", cfg.opus_count, cfg.seconds)
    jpeg_dir = root / "jpeg"
    jpeg_dir.mkdir(parents=True, exist_ok=True)
    variants = {"baseline": {}, "restart": {"restart_marker_blocks": 4}, "progressive": {"progressive": True}}
    for i, (name, kw) in enumerate(variants.items()):
        (jpeg_dir / f"{name}.jpg").write_bytes(fixtures.jpeg_bytes((64, 64), 75, cfg.seed + i, **kw))
    manifest = fixtures.toy_mp3_dataset(root / "toy", cfg.toy_per_class, seed=cfg.seed)
    for p in mp3 + opus + sorted(jpeg_dir.iterdir()):
        seq = open_blocks(p)
        print(f"{p}: {len(seq)} blocks, mean {seq.mean_block_length:.1f} bytes")
    print(f"toy manifest: {manifest}")


if __name__ == "__main__":
    main()
