"""Held-out accuracy with and without the reconstruction loss, on the byte-pattern task.

Each seed trains twice from the same initialisation seed: once on L_c + L_r
and once on L_c alone (reconstruction weight 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tempest.harness import TrainConfig, evaluate_examples, fit
from tempest.model import ModelConfig
from tempest.synthetic import byte_pattern_dataset

from _common import emit, parse_config


@dataclass
class AblationConfig:
    seeds: int = 5
    train_examples: int = 64
    heldout_examples: int = 256
    L_max: int = 16
    N: int = 32
    ff_dim: int = 64
    steps: int = 300
    batch_size: int = 16
    lr: float = 3e-3
    out: str = ""


def main() -> None:
    cfg = parse_config(AblationConfig, __doc__)
    out = Path(cfg.out) if cfg.out else None
    model = ModelConfig(N=cfg.N, ff_dim=cfg.ff_dim, P=1, C=1, L_max=cfg.L_max, heads=4, num_classes=2)
    acc = {"L_c+L_r": [], "L_c": []}
    for seed in range(cfg.seeds):
        train = byte_pattern_dataset(cfg.train_examples, L_max=cfg.L_max, seed=seed)
        held = byte_pattern_dataset(cfg.heldout_examples, L_max=cfg.L_max, seed=1000 + seed)
        for arm, weight in (("L_c+L_r", 1.0), ("L_c", 0.0)):
            tcfg = TrainConfig(model=model, steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr,
                               eval_interval=cfg.steps, seed=seed, recon_weight=weight)
            m, _ = fit(train, tcfg)
            a = evaluate_examples(m, held)["accuracy"]
            acc[arm].append(a)
            emit({"seed": seed, "arm": arm, "heldout_accuracy": a}, out)
    emit({arm: float(np.mean(v)) for arm, v in acc.items()} | {"summary": True}, out)


if __name__ == "__main__":
    main()
