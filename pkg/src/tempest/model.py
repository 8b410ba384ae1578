"""Block-embedding transformer for compressed byte streams.

Three sub-networks share one module:

* block embedder: byte embedding + intra-block sinusoid -> ``P`` encoder
  layers -> mixer that shrinks ``L_max`` positions to ``L_prime`` tokens;
* reconstruction decoder: ``L_max`` learned queries cross-attend to the
  block tokens, one layer, then a per-position head over 257 symbols;
* classifier: block tokens + inter-block sinusoid, a [CLS] token in front,
  ``C`` encoder layers and a linear head on the [CLS] output.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from tempest.errors import ConfigError, EmptyInput, LabelError, LengthError, NumericsError, VocabError
from tempest.tokenizer import PAD, VOCAB, TokenizedBlock


@dataclass
class ModelConfig:
    N: int = 216
    ff_dim: int = 864
    P: int = 2
    C: int = 7
    decoder_layers: int = 1
    L_max: int = 144
    L_prime: int = 1
    vocab: int = VOCAB
    num_classes: int = 50
    lam: float = 1.0
    heads: int = 4
    multi_label: bool = False
    byte_cap: int = 14 * 144  # longest raw-byte input for the baseline mode

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.N % 2:
            raise ConfigError(f"N must be even for sinusoidal encodings, got {self.N}")
        if self.heads < 1 or self.N % self.heads:
            raise ConfigError(f"N={self.N} is not divisible by heads={self.heads}")
        if self.L_prime < 1 or self.L_max < 1:
            raise ConfigError("L_prime and L_max must be >= 1")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.vocab != VOCAB:
            raise ConfigError(f"vocab is fixed at {VOCAB} (256 byte values + pad)")
        if self.decoder_layers != 1:
            raise ConfigError("the reconstruction decoder has exactly one layer")
        if min(self.P, self.C) < 0 or self.num_classes < 1:
            raise ConfigError("layer counts must be >= 0 and num_classes >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def tiny_config(**overrides) -> ModelConfig:
    """The small config used by gradient checks."""
    base = dict(N=8, ff_dim=16, P=1, C=1, L_max=6, L_prime=1, num_classes=2, heads=2)
    base.update(overrides)
    return ModelConfig(**base)


def sinusoidal_pe(length: int, N: int) -> np.ndarray:
    if N % 2:
        raise ConfigError(f"sinusoidal encoding needs an even width, got {N}")
    return _sinusoid(length, N).copy()


@lru_cache(maxsize=64)
def _sinusoid(length: int, N: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    div = np.power(10000.0, np.arange(0, N, 2, dtype=np.float64) / N)
    pe = np.empty((length, N))
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div)
    return pe


def _pe(length: int, N: int, like: Tensor) -> Tensor:
    return torch.from_numpy(_sinusoid(length, N)).to(dtype=like.dtype, device=like.device)


class Attention(nn.Module):
    def __init__(self, N: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(N, N)
        self.k = nn.Linear(N, N)
        self.v = nn.Linear(N, N)
        self.o = nn.Linear(N, N)

    def forward(self, xq: Tensor, xkv: Tensor, key_pad: Tensor | None = None) -> Tensor:
        B, Tq, N = xq.shape
        Tk = xkv.shape[1]
        h, d = self.heads, N // self.heads
        q = self.q(xq).view(B, Tq, h, d).transpose(1, 2)
        k = self.k(xkv).view(B, Tk, h, d).transpose(1, 2)
        v = self.v(xkv).view(B, Tk, h, d).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d)
        if key_pad is not None:
            scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        out = scores.softmax(-1) @ v
        return self.o(out.transpose(1, 2).reshape(B, Tq, N))


class FeedForward(nn.Sequential):
    def __init__(self, N: int, ff_dim: int):
        super().__init__(nn.Linear(N, ff_dim), nn.GELU(), nn.Linear(ff_dim, N))


class EncoderLayer(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, N: int, ff_dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(N)
        self.attn = Attention(N, heads)
        self.norm2 = nn.LayerNorm(N)
        self.ff = FeedForward(N, ff_dim)

    def forward(self, x: Tensor, key_pad: Tensor | None = None) -> Tensor:
        y = self.norm1(x)
        x = x + self.attn(y, y, key_pad)
        return x + self.ff(self.norm2(x))


class Encoder(nn.Module):
    def __init__(self, depth: int, N: int, ff_dim: int, heads: int):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(N, ff_dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(N) if depth else nn.Identity()

    def forward(self, x: Tensor, key_pad: Tensor | None = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, key_pad)
        return self.norm(x)


class Mixer(nn.Module):
    """Shrink ``L_max`` positions to ``L_prime`` tokens.

    A learned linear map over the position axis (shared by all channels),
    then a residual channel MLP, in the MLP-Mixer style.
    """

    def __init__(self, L_max: int, L_prime: int, N: int, ff_dim: int):
        super().__init__()
        self.token_mix = nn.Linear(L_max, L_prime)
        self.norm = nn.LayerNorm(N)
        self.channel_mix = FeedForward(N, ff_dim)

    def forward(self, x: Tensor) -> Tensor:
        # x: (B, L_max, N) -> (B, L_prime, N)
        x = self.token_mix(x.transpose(1, 2)).transpose(1, 2)
        return x + self.channel_mix(self.norm(x))


class ReconstructionDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        N = cfg.N
        self.queries = nn.Parameter(torch.randn(cfg.L_max, N) * 0.02)
        self.norm_q = nn.LayerNorm(N)
        self.norm_kv = nn.LayerNorm(N)
        self.cross = Attention(N, cfg.heads)
        self.norm_ff = nn.LayerNorm(N)
        self.ff = FeedForward(N, cfg.ff_dim)
        self.norm_out = nn.LayerNorm(N)
        self.head = nn.Linear(N, cfg.vocab)

    def forward(self, e: Tensor) -> Tensor:
        # e: (B, L_prime, N) -> logits (B, L_max, vocab)
        B = e.shape[0]
        q = (self.queries + _pe(self.queries.shape[0], e.shape[-1], e)).expand(B, -1, -1)
        q = q + self.cross(self.norm_q(q), self.norm_kv(e))
        q = q + self.ff(self.norm_ff(q))
        return self.head(self.norm_out(q))


class TempestModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        N = cfg.N
        self.byte_embedding = nn.Embedding(cfg.vocab, N)
        self.block_encoder = Encoder(cfg.P, N, cfg.ff_dim, cfg.heads)
        self.mixer = Mixer(cfg.L_max, cfg.L_prime, N, cfg.ff_dim)
        self.decoder = ReconstructionDecoder(cfg)
        self.cls_token = nn.Parameter(torch.randn(N) * 0.02)
        self.seq_encoder = Encoder(cfg.C, N, cfg.ff_dim, cfg.heads)
        self.classifier = nn.Linear(N, cfg.num_classes)

    def _check_tokens(self, tokens: Tensor) -> None:
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) > PAD):
            raise VocabError("tokens must lie in 0..256")

    def embed_blocks(self, tokens: Tensor) -> Tensor:
        """(M, L_max) int tokens -> (M, L_prime, N) block embeddings."""
        self._check_tokens(tokens)
        if tokens.shape[-1] != self.cfg.L_max:
            raise LengthError(f"blocks must have {self.cfg.L_max} tokens, got {tokens.shape[-1]}")
        x = self.byte_embedding(tokens)
        x = x + _pe(self.cfg.L_max, self.cfg.N, x)
        return self.mixer(self.block_encoder(x))

    def reconstruct(self, emb: Tensor) -> Tensor:
        return self.decoder(emb)

    def classify_embedded(self, emb: Tensor, block_mask: Tensor | None = None) -> Tensor:
        """(B, I, L_prime, N) block embeddings -> (B, num_classes) logits.

        ``block_mask`` (B, I) marks real blocks; padded blocks are hidden from
        attention.
        """
        B, I, Lp, N = emb.shape
        if I == 0:
            raise EmptyInput("need at least one block")
        x = emb.reshape(B, I * Lp, N)
        x = x + _pe(I * Lp, N, x)
        x = torch.cat([self.cls_token.expand(B, 1, N), x], dim=1)
        key_pad = None
        if block_mask is not None:
            tok_mask = block_mask.repeat_interleave(Lp, dim=1)
            key_pad = torch.cat([torch.zeros(B, 1, dtype=torch.bool, device=x.device), ~tok_mask], dim=1)
        h = self.seq_encoder(x, key_pad)
        return self.classifier(h[:, 0])

    def forward(self, tokens: Tensor, block_mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """(B, I, L_max) tokens -> (recon logits (B, I, L_max, vocab), class logits (B, classes))."""
        B, I, L = tokens.shape
        emb = self.embed_blocks(tokens.reshape(B * I, L))
        recon = self.reconstruct(emb).reshape(B, I, L, -1)
        logits = self.classify_embedded(emb.reshape(B, I, self.cfg.L_prime, self.cfg.N), block_mask)
        return recon, logits

    def classify_bytes(self, raw: Tensor, pad_mask: Tensor | None = None) -> Tensor:
        """Baseline: every byte is a token fed straight to the classifier.

        ``raw`` is (B, T) with T <= ``byte_cap``; no block embedder, mixer or
        decoder is involved.
        """
        self._check_tokens(raw)
        B, T = raw.shape
        if T > self.cfg.byte_cap:
            raise LengthError(f"{T} byte tokens exceed the cap of {self.cfg.byte_cap}")
        if T == 0:
            raise EmptyInput("no bytes")
        x = self.byte_embedding(raw)
        x = x + _pe(T, self.cfg.N, x)
        x = torch.cat([self.cls_token.expand(B, 1, -1), x], dim=1)
        key_pad = None
        if pad_mask is not None:
            key_pad = torch.cat([torch.zeros(B, 1, dtype=torch.bool, device=x.device), pad_mask], dim=1)
        return self.classifier(self.seq_encoder(x, key_pad)[:, 0])


def _block_tensor(t: TokenizedBlock | Tensor | np.ndarray) -> Tensor:
    if isinstance(t, TokenizedBlock):
        t = t.tokens
    return torch.as_tensor(np.asarray(t), dtype=torch.long)


def embed_block(t: TokenizedBlock, model: TempestModel) -> Tensor:
    """One block -> (L_prime, N) embedding."""
    return model.embed_blocks(_block_tensor(t)[None])[0]


def reconstruct_block(e: Tensor, model: TempestModel) -> Tensor:
    """(L_prime, N) embedding -> (L_max, vocab) logits."""
    return model.reconstruct(e[None])[0]


def classify(blocks: list[Tensor], model: TempestModel) -> Tensor:
    """List of (L_prime, N) embeddings -> (num_classes,) logits."""
    if not blocks:
        raise EmptyInput("need at least one block embedding")
    return model.classify_embedded(torch.stack(blocks)[None])[0]


def classify_bytes(raw_tokens, model: TempestModel) -> Tensor:
    raw = torch.as_tensor(np.asarray(raw_tokens), dtype=torch.long)
    return model.classify_bytes(raw[None])[0]


def joint_loss(
    recon_logits: Tensor,
    original_tokens: Tensor,
    class_logits: Tensor,
    label: Tensor,
    lam: float = 1.0,
    block_mask: Tensor | None = None,
    multi_label: bool = False,
) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(total, L_r, L_c)`` with ``total = L_r + lam * L_c``.

    ``L_r`` is the mean cross-entropy over every position of every real block,
    pad positions included (target 256). ``L_c`` is soft-label cross-entropy,
    or mean binary cross-entropy when ``multi_label``.
    """
    vocab = recon_logits.shape[-1]
    ce = F.cross_entropy(recon_logits.reshape(-1, vocab), original_tokens.reshape(-1), reduction="none")
    ce = ce.reshape(original_tokens.shape)
    if block_mask is not None:
        w = block_mask[..., None].expand_as(ce).to(ce.dtype)
        l_r = (ce * w).sum() / w.sum()
    else:
        l_r = ce.mean()

    label = label.to(class_logits.dtype)
    if class_logits.dim() == 1:
        class_logits, label = class_logits[None], label[None]
    if multi_label:
        l_c = F.binary_cross_entropy_with_logits(class_logits, label)
    else:
        if torch.any(label < 0) or torch.any((label.sum(-1) - 1).abs() > 1e-6):
            raise LabelError("class label must be a probability distribution")
        l_c = -(label * class_logits.log_softmax(-1)).sum(-1).mean()
    return l_r + lam * l_c, l_r, l_c


def gradients(loss_fn, params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Gradient of the scalar ``loss_fn()`` w.r.t. each named tensor."""
    for name, p in params.items():
        if not torch.isfinite(p).all():
            raise NumericsError(f"parameter {name} is not finite")
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericsError(f"loss is not finite: {loss.item()}")
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}


# -- analytic accounting ------------------------------------------------------

def _linear(a: int, b: int) -> int:
    return a * b + b


def encoder_layer_params(cfg: ModelConfig) -> int:
    N = cfg.N
    return 4 * _linear(N, N) + _linear(N, cfg.ff_dim) + _linear(cfg.ff_dim, N) + 2 * 2 * N


def param_count(cfg: ModelConfig) -> int:
    """Exact number of learnable scalars in ``TempestModel(cfg)``."""
    N, ff = cfg.N, cfg.ff_dim
    norm = 2 * N
    layer = encoder_layer_params(cfg)
    ffn = _linear(N, ff) + _linear(ff, N)

    def stack(depth: int) -> int:
        return depth * layer + (norm if depth else 0)

    embedding = cfg.vocab * N
    mixer = _linear(cfg.L_max, cfg.L_prime) + norm + ffn
    decoder = cfg.L_max * N + 4 * _linear(N, N) + ffn + 4 * norm + _linear(N, cfg.vocab)
    classifier = N + stack(cfg.C) + _linear(N, cfg.num_classes)
    return embedding + stack(cfg.P) + mixer + decoder + classifier


def _encoder_layer_macs(T: int, N: int, ff: int) -> int:
    return 4 * T * N * N + 2 * T * T * N + 2 * T * N * ff


def flops_estimate(cfg: ModelConfig, num_blocks: int, include_decoder: bool = True) -> float:
    """Forward-pass FLOPs counted as 2 x multiply-accumulates of every matmul.

    Norms, softmax, activations and embedding lookups are not counted.
    """
    if num_blocks < 1:
        raise ValueError("num_blocks must be >= 1")
    N, ff, L, Lp = cfg.N, cfg.ff_dim, cfg.L_max, cfg.L_prime
    per_block = cfg.P * _encoder_layer_macs(L, N, ff)
    per_block += L * Lp * N + 2 * Lp * N * ff  # mixer
    if include_decoder:
        per_block += (
            2 * L * N * N  # query and output projections
            + 2 * Lp * N * N  # key/value projections
            + 2 * L * Lp * N  # scores and weighted values
            + 2 * L * N * ff
            + L * N * cfg.vocab
        )
    T = num_blocks * Lp + 1
    total = num_blocks * per_block + cfg.C * _encoder_layer_macs(T, N, ff) + N * cfg.num_classes
    return 2.0 * total


def byte_baseline_flops(cfg: ModelConfig, num_bytes: int) -> float:
    T = num_bytes + 1
    return 2.0 * (cfg.C * _encoder_layer_macs(T, cfg.N, cfg.ff_dim) + cfg.N * cfg.num_classes)
