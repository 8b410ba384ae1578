"""Manifests, training, evaluation, multi-rate inference and cost reports."""

from __future__ import annotations

import enum
import json
import logging
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch

from tempest.augment import BitrateSet, Codec, TranscodeCache, block_cutmix
from tempest.bytestream import ByteStream
from tempest.checkpoint import load_checkpoint, save_checkpoint
from tempest.errors import ConfigError, DatasetError, EmptyInput, TempestError
from tempest.model import (
    ModelConfig,
    TempestModel,
    byte_baseline_flops,
    flops_estimate,
    joint_loss,
    param_count,
)
from tempest.parsers import DEFAULT_CHUNK_BYTES, open_blocks, parse_stream, prepare_stream
from tempest.synthetic import Example
from tempest.tokenizer import PAD, TokenMatrix, TruncationCounter, compute_tbr, tokenize_stream

log = logging.getLogger(__name__)


class Task(enum.Enum):
    SINGLE_LABEL = "single_label"
    MULTI_LABEL = "multi_label"


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    labels: tuple[int, ...]
    split: str = "train"
    fold: int | None = None


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    num_classes: int
    task: Task = Task.SINGLE_LABEL

    def __post_init__(self):
        seen: dict[str, set[str]] = {}
        for e in self.entries:
            if not e.labels or any(not 0 <= c < self.num_classes for c in e.labels):
                raise DatasetError(f"{e.path}: labels {e.labels} outside 0..{self.num_classes - 1}")
            if self.task is Task.SINGLE_LABEL and len(e.labels) != 1:
                raise DatasetError(f"{e.path}: single-label task with {len(e.labels)} labels")
            paths = seen.setdefault(e.split, set())
            if e.path in paths:
                raise DatasetError(f"{e.path} listed twice in split {e.split!r}")
            paths.add(e.path)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    @property
    def folds(self) -> list[int]:
        return sorted({e.fold for e in self.entries if e.fold is not None})

    def fold_split(self, fold: int) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
        """Cross-validation split: ``fold`` is held out, every other fold trains."""
        train = [e for e in self.entries if e.fold is not None and e.fold != fold]
        held = [e for e in self.entries if e.fold == fold]
        return train, held

    def label_vector(self, e: ManifestEntry) -> np.ndarray:
        v = np.zeros(self.num_classes)
        v[list(e.labels)] = 1.0  # one-hot, or multi-hot for multi-label
        return v

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"num_classes": self.num_classes, "task": self.task.value}) + "\n")
            for e in self.entries:
                rec = {"path": e.path, "split": e.split}
                if self.task is Task.SINGLE_LABEL:
                    rec["label"] = e.labels[0]
                else:
                    rec["labels"] = list(e.labels)
                if e.fold is not None:
                    rec["fold"] = e.fold
                fh.write(json.dumps(rec) + "\n")


def read_manifest(path: str | Path) -> Manifest:
    """Read a JSON-lines manifest.

    A record carrying ``num_classes`` (and optionally ``task``) is the
    header; every other record is ``{path, label | labels, split, fold?}``.
    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    header: dict = {}
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc.msg}") from exc
        if "num_classes" in rec:
            header = rec
            continue
        if "labels" in rec:
            labels = tuple(int(x) for x in rec["labels"])
        elif "label" in rec:
            labels = (int(rec["label"]),)
        else:
            raise DatasetError(f"{path}:{lineno}: record has no label")
        p = Path(rec["path"])
        entries.append(ManifestEntry(
            path=str(p if p.is_absolute() else base / p),
            labels=labels,
            split=rec.get("split", "train"),
            fold=rec.get("fold"),
        ))
    task = Task(header.get("task", Task.SINGLE_LABEL.value))
    num_classes = header.get("num_classes") or (1 + max((max(e.labels) for e in entries), default=0))
    return Manifest(entries, int(num_classes), task)


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 16
    steps: int = 500
    lr: float = 1e-3
    weight_decay: float = 0.01
    schedule: str = "cosine"  # or "constant"
    warmup_steps: int = 0
    seed: int = 0
    recon_weight: float = 1.0
    bitrate_set: tuple[int, ...] | None = None
    codec: str = "mp3"
    samplerate_hz: int = 0
    cutmix: bool = False
    cutmix_prob: float = 0.5
    cutmix_max_fraction: float = 0.5
    max_blocks: int = 64
    target_chunk_bytes: int = DEFAULT_CHUNK_BYTES
    eval_interval: int = 50
    cache_dir: str | None = None
    deterministic: bool = True

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.bitrate_set is not None:
            self.bitrate_set = tuple(self.bitrate_set)
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**d)


@dataclass
class Prediction:
    probs: np.ndarray
    multi_label: bool = False

    def __post_init__(self):
        if not self.multi_label and abs(self.probs.sum() - 1.0) > 1e-6:
            raise ValueError("single-label probabilities must sum to 1")

    @property
    def label(self) -> int:
        return int(np.argmax(self.probs))


# -- loading -----------------------------------------------------------------

def load_examples(
    entries: Iterable[ManifestEntry],
    manifest: Manifest,
    cfg: TrainConfig,
    rates: Iterable[int] | None = None,
) -> list[Example]:
    """Parse and tokenize manifest entries.

    With ``rates`` each entry is a source waveform encoded once per rate
    through the transcode cache; otherwise it is already a compressed file.
    Unparseable files are skipped and counted.
    """
    rates = list(rates) if rates else []
    cache = None
    if rates:
        cache = TranscodeCache(cfg.cache_dir or Path.home() / ".cache" / "tempest")
    counter = TruncationCounter()
    examples, skipped = [], 0
    L_max = cfg.model.L_max
    for e in entries:
        label = manifest.label_vector(e)
        tm_label = label if manifest.task is Task.SINGLE_LABEL else None
        try:
            if rates:
                variants = []
                for r in rates:
                    s = cache.get(e.path, Codec(cfg.codec), r, cfg.samplerate_hz)
                    seq = parse_stream(prepare_stream(s), cfg.target_chunk_bytes)
                    variants.append(tokenize_stream(seq, L_max, cfg.max_blocks, tm_label, counter))
            else:
                seq = open_blocks(e.path, target_chunk_bytes=cfg.target_chunk_bytes)
                variants = [tokenize_stream(seq, L_max, cfg.max_blocks, tm_label, counter)]
        except TempestError as exc:
            skipped += 1
            log.warning("skipping %s: %s", e.path, exc)
            continue
        examples.append(Example(variants, label, key=e.path, fold=e.fold))
    if skipped:
        log.warning("skipped %d unparseable files", skipped)
    if counter.blocks:
        log.info("truncated %d blocks to %d tokens", counter.blocks, L_max)
    if not examples:
        raise DatasetError("no usable examples")
    return examples


# -- batching ----------------------------------------------------------------

def collate(mats: list[TokenMatrix]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack token matrices, padding missing blocks with all-pad rows."""
    rows = max(m.rows for m in mats)
    L = mats[0].L_max
    tokens = torch.full((len(mats), rows, L), PAD, dtype=torch.long)
    mask = torch.zeros(len(mats), rows, dtype=torch.bool)
    for i, m in enumerate(mats):
        tokens[i, :m.rows] = torch.from_numpy(m.tokens)
        mask[i, :m.rows] = True
    return tokens, mask


def _labels(mats: list[TokenMatrix], fallback: list[np.ndarray]) -> torch.Tensor:
    rows = [m.label if m.label is not None else f for m, f in zip(mats, fallback)]
    return torch.from_numpy(np.stack(rows))


def _lr_lambda(cfg: TrainConfig) -> Callable[[int], float]:
    def f(step: int) -> float:
        if cfg.warmup_steps and step < cfg.warmup_steps:
            return (step + 1) / cfg.warmup_steps
        if cfg.schedule == "constant":
            return 1.0
        t = (step - cfg.warmup_steps) / max(1, cfg.steps - cfg.warmup_steps)
        return 0.5 * (1.0 + math.cos(math.pi * min(1.0, t)))
    return f


def _set_determinism(cfg: TrainConfig) -> None:
    torch.manual_seed(cfg.seed)
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)


def fit(
    examples: list[Example],
    cfg: TrainConfig,
    eval_examples: list[Example] | None = None,
    on_metrics: Callable[[dict], None] | None = None,
) -> tuple[TempestModel, list[dict]]:
    """Optimise ``recon_weight * L_r + lam * L_c`` with AdamW.

    Each step draws one variant per example uniformly at random (the
    multi-rate training rule) and, when enabled, applies block CutMix
    between an example and its neighbour in the batch.
    """
    if not examples:
        raise DatasetError("empty training set")
    _set_determinism(cfg)
    mcfg = cfg.model
    model = TempestModel(mcfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, _lr_lambda(cfg))
    rng = np.random.default_rng(cfg.seed)
    metrics: list[dict] = []
    order = rng.permutation(len(examples))
    cursor = 0
    def fresh() -> dict:
        return {"loss": 0.0, "L_r": 0.0, "L_c": 0.0, "correct": 0, "seen": 0, "n": 0}

    window = fresh()

    for step in range(1, cfg.steps + 1):
        idx = []
        while len(idx) < min(cfg.batch_size, len(examples)):
            if cursor == len(order):
                order, cursor = rng.permutation(len(examples)), 0
            idx.append(order[cursor])
            cursor += 1
        batch = [examples[i] for i in idx]
        mats = [ex.variants[int(rng.integers(len(ex.variants)))] for ex in batch]
        if cfg.cutmix and len(mats) > 1 and not mcfg.multi_label:
            mixed = []
            for j, m in enumerate(mats):
                other = mats[(j + 1) % len(mats)]
                if rng.random() < cfg.cutmix_prob and other.rows == m.rows and m.label is not None:
                    m = block_cutmix(m, other, rng, cfg.cutmix_max_fraction)
                mixed.append(m)
            mats = mixed
        tokens, mask = collate(mats)
        labels = _labels(mats, [ex.label for ex in batch]).float()

        model.train()
        recon, logits = model(tokens, mask)
        _, l_r, l_c = joint_loss(recon, tokens, logits, labels, mcfg.lam, mask, mcfg.multi_label)
        loss = cfg.recon_weight * l_r + mcfg.lam * l_c
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()

        with torch.no_grad():
            if mcfg.multi_label:
                correct = ((logits > 0) == (labels > 0.5)).all(-1).sum().item()
            else:
                correct = (logits.argmax(-1) == labels.argmax(-1)).sum().item()
        window["loss"] += loss.item()
        window["L_r"] += l_r.item()
        window["L_c"] += l_c.item()
        window["correct"] += correct
        window["seen"] += len(batch)
        window["n"] += 1
        if step % cfg.eval_interval == 0 or step == cfg.steps:
            rec = {
                "step": step,
                "loss": window["loss"] / window["n"],
                "L_r": window["L_r"] / window["n"],
                "L_c": window["L_c"] / window["n"],
                "train_acc": window["correct"] / window["seen"],
                "lr": sched.get_last_lr()[0],
            }
            if eval_examples:
                rec.update({f"eval_{k}": v for k, v in evaluate_examples(model, eval_examples).items()})
            metrics.append(rec)
            if on_metrics:
                on_metrics(rec)
            window = fresh()
    model.eval()
    return model, metrics


# -- inference ---------------------------------------------------------------

@torch.no_grad()
def predict_probs(model: TempestModel, mats: list[TokenMatrix], batch_size: int = 64,
                  aggregate_logits: bool = False) -> np.ndarray:
    """Class probabilities (softmax, or sigmoid for multi-label); raw logits if asked."""
    model.eval()
    out = []
    for i in range(0, len(mats), batch_size):
        tokens, mask = collate(mats[i:i + batch_size])
        emb = model.embed_blocks(tokens.reshape(-1, tokens.shape[-1]))
        logits = model.classify_embedded(emb.reshape(*tokens.shape[:2], model.cfg.L_prime, model.cfg.N), mask)
        logits = logits.double()
        if aggregate_logits:
            out.append(logits)
        elif model.cfg.multi_label:
            out.append(torch.sigmoid(logits))
        else:
            out.append(torch.softmax(logits, -1))
    return torch.cat(out).numpy()


def _finish(agg: np.ndarray, multi_label: bool, from_logits: bool) -> np.ndarray:
    if not from_logits:
        return agg
    t = torch.from_numpy(agg)
    return (torch.sigmoid(t) if multi_label else torch.softmax(t, -1)).numpy()


def exact_mean(rows: np.ndarray) -> np.ndarray:
    """Column means computed in rational arithmetic and rounded once.

    The result is independent of row order, and the mean of identical rows
    is that row, bit for bit.
    """
    k = rows.shape[0]
    return np.array([float(sum(map(Fraction, col)) / k) for col in rows.T])


def ensemble_variants(model: TempestModel, variants: list[TokenMatrix], aggregate: str = "prob") -> Prediction:
    """Mean of per-variant probabilities (or of logits with ``aggregate='logit'``)."""
    if not variants:
        raise EmptyInput("need at least one encoding")
    if aggregate not in ("prob", "logit"):
        raise ConfigError(f"unknown aggregate {aggregate!r}")
    from_logits = aggregate == "logit"
    # One forward pass per encoding, so no result depends on batch position.
    per = np.concatenate([predict_probs(model, [v], aggregate_logits=from_logits) for v in variants])
    probs = _finish(exact_mean(per), model.cfg.multi_label, from_logits)
    return Prediction(probs, model.cfg.multi_label)


def multirate_infer(
    model: TempestModel | str | Path,
    streams: list[ByteStream],
    max_blocks: int | None = None,
    aggregate: str = "prob",
) -> Prediction:
    """Classify several encodings of one signal and average their predictions."""
    if not streams:
        raise EmptyInput("no streams")
    if not isinstance(model, TempestModel):
        model, extra = load_checkpoint(model)
        max_blocks = max_blocks or extra.get("max_blocks")
    variants = []
    for s in streams:
        seq = parse_stream(prepare_stream(s))
        variants.append(tokenize_stream(seq, model.cfg.L_max, max_blocks))
    return ensemble_variants(model, variants, aggregate)


def average_precision(scores: np.ndarray, targets: np.ndarray) -> float:
    order = np.argsort(-scores, kind="stable")
    hits = targets[order] > 0.5
    if not hits.any():
        return float("nan")
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].mean())


def mean_average_precision(scores: np.ndarray, targets: np.ndarray) -> float:
    aps = [average_precision(scores[:, c], targets[:, c]) for c in range(scores.shape[1])]
    aps = [a for a in aps if not math.isnan(a)]
    return float(np.mean(aps)) if aps else float("nan")


def score(probs: np.ndarray, labels: np.ndarray, multi_label: bool) -> dict:
    if multi_label:
        return {"mAP": mean_average_precision(probs, labels), "n": len(labels)}
    return {"accuracy": float((probs.argmax(-1) == labels.argmax(-1)).mean()), "n": len(labels)}


def evaluate_examples(model: TempestModel, examples: list[Example], variant: int | str = 0) -> dict:
    """Top-1 accuracy (single-label) or mAP (multi-label).

    ``variant`` picks which encoding to score, or ``"ensemble"`` to average
    every encoding of each example.
    """
    if not examples:
        raise EmptyInput("nothing to evaluate")
    if examples[0].label.shape[0] != model.cfg.num_classes:
        raise ConfigError(f"data has {examples[0].label.shape[0]} classes, model {model.cfg.num_classes}")
    if variant == "ensemble":
        probs = np.stack([ensemble_variants(model, ex.variants).probs for ex in examples])
    else:
        probs = predict_probs(model, [ex.variants[variant] for ex in examples])
    labels = np.stack([ex.label for ex in examples])
    return score(probs, labels, model.cfg.multi_label)


def _metric_name(multi_label: bool) -> str:
    return "mAP" if multi_label else "accuracy"


def evaluate(checkpoint: str | Path | TempestModel, manifest: Manifest, split: str = "test",
             cfg: TrainConfig | None = None) -> dict:
    """Score one split; entries with fold ids also get a per-fold breakdown."""
    if isinstance(checkpoint, TempestModel):
        model, extra = checkpoint, {}
    else:
        model, extra = load_checkpoint(checkpoint)
    if manifest.num_classes != model.cfg.num_classes:
        raise ConfigError(f"manifest has {manifest.num_classes} classes, checkpoint {model.cfg.num_classes}")
    if cfg is None:
        cfg = TrainConfig(model=model.cfg, max_blocks=extra.get("max_blocks", 64),
                          target_chunk_bytes=extra.get("target_chunk_bytes", DEFAULT_CHUNK_BYTES))
    entries = manifest.split(split)
    if not entries:
        raise DatasetError(f"split {split!r} is empty")
    examples = load_examples(entries, manifest, cfg)
    result = evaluate_examples(model, examples)
    folds = sorted({ex.fold for ex in examples if ex.fold is not None})
    if folds:
        name = _metric_name(model.cfg.multi_label)
        per = {f: evaluate_examples(model, [ex for ex in examples if ex.fold == f])[name] for f in folds}
        result["folds"] = per
        result["fold_mean"] = float(np.mean(list(per.values())))
    return result


def train(
    manifest: Manifest,
    cfg: TrainConfig,
    out_dir: str | Path,
    train_split: str = "train",
    eval_split: str | None = None,
) -> tuple[Path, list[dict]]:
    """Train on one split, write ``checkpoint.tmpc`` and ``metrics.jsonl`` to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.model.num_classes != manifest.num_classes:
        raise ConfigError(f"model has {cfg.model.num_classes} classes, manifest {manifest.num_classes}")
    if (manifest.task is Task.MULTI_LABEL) != cfg.model.multi_label:
        raise ConfigError("model multi_label flag does not match the manifest task")
    entries = manifest.split(train_split)
    if not entries:
        raise DatasetError(f"split {train_split!r} is empty")
    rates = list(BitrateSet(cfg.bitrate_set, Codec(cfg.codec)).rates_bps) if cfg.bitrate_set else None
    examples = load_examples(entries, manifest, cfg, rates)
    evals = None
    if eval_split:
        evals = load_examples(manifest.split(eval_split), manifest, cfg, rates[:1] if rates else None)
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w") as fh:
        def emit(rec: dict) -> None:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
        model, metrics = fit(examples, cfg, evals, emit)
    ckpt = out_dir / "checkpoint.tmpc"
    save_checkpoint(ckpt, model, extra={"max_blocks": cfg.max_blocks,
                                        "target_chunk_bytes": cfg.target_chunk_bytes,
                                        "seed": cfg.seed})
    return ckpt, metrics


def cross_validate(manifest: Manifest, cfg: TrainConfig, out_dir: str | Path) -> dict:
    """Train one model per held-out fold; report each fold and their mean."""
    folds = manifest.folds
    if not folds:
        raise DatasetError("manifest has no fold ids")
    name = _metric_name(cfg.model.multi_label)
    per = {}
    for f in folds:
        train_e, held = manifest.fold_split(f)
        overlap = {e.path for e in train_e} & {e.path for e in held}
        if overlap:
            raise DatasetError(f"fold {f}: {len(overlap)} paths in both train and eval")
        fold_manifest = Manifest(
            [ManifestEntry(e.path, e.labels, "train", e.fold) for e in train_e]
            + [ManifestEntry(e.path, e.labels, "eval", e.fold) for e in held],
            manifest.num_classes, manifest.task,
        )
        ckpt, _ = train(fold_manifest, cfg, Path(out_dir) / f"fold{f}")
        per[f] = evaluate(ckpt, fold_manifest, "eval", cfg)[name]
    return {"folds": per, "mean": float(np.mean(list(per.values())))}


# -- cost report -------------------------------------------------------------

# FLOPs the reference run reported for each (embedding, classification) depth split.
REPORTED_FLOPS_G = {(1, 8): 11.92, (2, 7): 16.85, (3, 6): 21.78}
BASELINE_FRAMES = 14


def bench(
    cfg: ModelConfig,
    clip_seconds: float = 1.0,
    blocks_per_second: float = 31.0,
    avg_block_bytes: float | None = None,
    baseline_frames: int = BASELINE_FRAMES,
) -> dict:
    """Sequence length, attention size, FLOPs and parameter count for one clip.

    The byte-baseline figures are for ``baseline_frames`` frames of
    ``L_max`` bytes each fed to the classifier one byte per token.
    """
    if clip_seconds <= 0 or blocks_per_second <= 0:
        raise ConfigError("clip_seconds and blocks_per_second must be positive")
    blocks = max(1, round(clip_seconds * blocks_per_second))
    tokens = blocks * cfg.L_prime + 1
    avg = avg_block_bytes or cfg.L_max
    byte_tokens = baseline_frames * cfg.L_max + 1
    report = {
        "clip_seconds": clip_seconds,
        "blocks": blocks,
        "tokens": tokens,
        "attention_entries": tokens * tokens,
        "tps": blocks * cfg.L_prime / clip_seconds,
        "tbr": compute_tbr(cfg.L_prime, avg),
        "flops": flops_estimate(cfg, blocks),
        "flops_no_decoder": flops_estimate(cfg, blocks, include_decoder=False),
        "params": param_count(cfg),
        "byte_baseline_tokens": byte_tokens,
        "byte_baseline_attention_entries": byte_tokens * byte_tokens,
        "byte_baseline_flops": byte_baseline_flops(cfg, byte_tokens - 1),
    }
    reported = REPORTED_FLOPS_G.get((cfg.P, cfg.C))
    if reported is not None:
        report["reported_flops_g"] = reported
    return report
