"""Cost table: tokens, attention size, parameters and FLOPs per embedding/classifier depth split."""

from __future__ import annotations

from dataclasses import dataclass

from tempest.harness import REPORTED_FLOPS_G, bench
from tempest.model import ModelConfig

from _common import parse_config


@dataclass
class BenchConfig:
    clip_seconds: float = 5.0
    blocks_per_second: float = 32.0
    L_prime: int = 1


def main() -> None:
    cfg = parse_config(BenchConfig, __doc__)
    print(f"{cfg.clip_seconds:g} s clip, {cfg.blocks_per_second:g} blocks/s, L'={cfg.L_prime}")
    print(f"{'P/C':>5} {'tokens':>7} {'attn':>8} {'params':>9} {'GFLOPs':>8} {'no dec':>8} {'reported':>9}")
    for (P, C), reported in REPORTED_FLOPS_G.items():
        r = bench(ModelConfig(P=P, C=C, L_prime=cfg.L_prime), cfg.clip_seconds, cfg.blocks_per_second)
        print(f"{P}/{C:<3} {r['tokens']:>7} {r['attention_entries']:>8} {r['params']:>9} "
              f"{r['flops'] / 1e9:>8.2f} {r['flops_no_decoder'] / 1e9:>8.2f} {reported:>9.2f}")
    r = bench(ModelConfig(), 1.0, 31)
    print(f"byte baseline: {r['byte_baseline_tokens']} tokens, "
          f"{r['byte_baseline_attention_entries']} attention entries vs {r['attention_entries']}")


if __name__ == "__main__":
    main()
