import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from tempest.errors import ConfigError, EmptyInput, LabelError, LengthError, NumericsError, VocabError
from tempest.harness import TrainConfig, fit
from tempest.model import (
    ModelConfig, TempestModel, classify, classify_bytes, embed_block, encoder_layer_params, flops_estimate,
    gradients, joint_loss, param_count, reconstruct_block, sinusoidal_pe, tiny_config,
)
from tempest.synthetic import byte_pattern_dataset
from tempest.tokenizer import PAD, tokenize_bytes

from gradcheck import relative_errors, tiny_problem


def small(**kw) -> ModelConfig:
    base = dict(N=16, ff_dim=32, P=1, C=1, L_max=12, heads=4, num_classes=3)
    base.update(kw)
    return ModelConfig(**base)


def test_pe_row_zero_and_values():
    pe = sinusoidal_pe(5, 8)
    assert pe[0].tolist() == [0, 1] * 4
    assert pe[3, 0] == pytest.approx(math.sin(3)) and pe[3, 1] == pytest.approx(math.cos(3))
    assert pe[2, 2] == pytest.approx(math.sin(2 / 10000 ** (2 / 8)))
    with pytest.raises(ConfigError):
        sinusoidal_pe(4, 7)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(N=7)
    with pytest.raises(ConfigError):
        ModelConfig(N=216, heads=5)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"N": 8, "bogus": 1})
    cfg = small()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_embedding_shape_purity_and_order():
    torch.manual_seed(0)
    model = TempestModel(ModelConfig(num_classes=5, C=1, P=1)).eval()
    rng = np.random.default_rng(0)
    data = bytes(rng.integers(0, 256, 100, dtype=np.uint8))
    t = tokenize_bytes(data, 144)
    with torch.no_grad():
        e = embed_block(t, model)
        assert e.shape == (1, 216)
        assert torch.equal(e, embed_block(tokenize_bytes(data, 144), model))
        swapped = bytearray(data)
        swapped[3], swapped[40] = swapped[40], swapped[3]
        assert swapped != data
        assert not torch.allclose(e, embed_block(tokenize_bytes(bytes(swapped), 144), model))
        logits = reconstruct_block(e, model)
        assert logits.shape == (144, 257) and torch.isfinite(logits).all()


def test_vocab_and_length_errors():
    model = TempestModel(small())
    with pytest.raises(VocabError):
        model.embed_blocks(torch.full((1, 12), 257))
    with pytest.raises(LengthError):
        model.embed_blocks(torch.zeros((1, 11), dtype=torch.long))
    with pytest.raises(EmptyInput):
        classify([], model)


def _seq_len_hook(model):
    seen = []
    model.seq_encoder.register_forward_pre_hook(lambda mod, args: seen.append(args[0].shape[1]))
    return seen


@pytest.mark.parametrize("blocks, L_prime", [(31, 1), (31, 2), (5, 3)])
def test_classifier_sequence_length(blocks, L_prime):
    model = TempestModel(small(L_prime=L_prime)).eval()
    seen = _seq_len_hook(model)
    tokens = torch.randint(0, 257, (1, blocks, 12))
    with torch.no_grad():
        _, logits = model(tokens)
    assert seen == [blocks * L_prime + 1] and logits.shape == (1, 3)


def test_byte_baseline_lengths():
    model = TempestModel(small(byte_cap=14 * 144)).eval()
    seen = _seq_len_hook(model)
    with torch.no_grad():
        classify_bytes(np.zeros(14 * 144, dtype=np.int64), model)
        classify_bytes([7], model)
    assert seen == [2017, 2]
    with pytest.raises(LengthError):
        classify_bytes(np.zeros(14 * 144 + 1, dtype=np.int64), model)


def test_block_mask_hides_padding_blocks():
    torch.manual_seed(1)
    model = TempestModel(small()).eval()
    tokens = torch.randint(0, 256, (1, 3, 12))
    with torch.no_grad():
        _, a = model(tokens[:, :2])
        padded = torch.cat([tokens[:, :2], torch.full((1, 1, 12), PAD)], 1)
        _, b = model(padded, torch.tensor([[True, True, False]]))
    torch.testing.assert_close(a, b, rtol=1e-5, atol=1e-6)


def test_uniform_logits_give_ln257():
    tokens = torch.randint(0, 257, (2, 3, 6))
    recon = torch.zeros(2, 3, 6, 257)
    _, l_r, _ = joint_loss(recon, tokens, torch.zeros(2, 2), torch.tensor([[1.0, 0], [0, 1.0]]))
    assert l_r.item() == pytest.approx(math.log(257), rel=1e-6)


def test_lambda_zero_is_reconstruction_only():
    model, _ = tiny_problem(0)
    tokens = torch.randint(0, 257, (2, 3, 6))
    recon, logits = model(tokens)
    label = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    total, l_r, _ = joint_loss(recon, tokens, logits, label, lam=0.0)
    assert total.item() == l_r.item()
    params = dict(model.named_parameters())
    grads = gradients(lambda: joint_loss(*model(tokens)[:1], tokens, model(tokens)[1], label, lam=0.0)[0], params)
    cls_path = [n for n in params if n.startswith(("classifier", "seq_encoder", "cls_token"))]
    assert cls_path and all(torch.count_nonzero(grads[n]) == 0 for n in cls_path)
    assert torch.count_nonzero(grads["decoder.head.weight"]) > 0


def test_label_must_be_distribution():
    with pytest.raises(LabelError):
        joint_loss(torch.zeros(1, 1, 4, 257), torch.zeros(1, 1, 4, dtype=torch.long),
                   torch.zeros(1, 2), torch.tensor([[0.5, 0.6]]))


def test_multi_label_loss_is_bce():
    logits = torch.tensor([[0.3, -1.2, 2.0]])
    target = torch.tensor([[1.0, 0.0, 1.0]])
    _, _, l_c = joint_loss(torch.zeros(1, 1, 2, 257), torch.zeros(1, 1, 2, dtype=torch.long),
                           logits, target, multi_label=True)
    p = torch.sigmoid(logits)
    want = -(target * p.log() + (1 - target) * (1 - p).log()).mean()
    assert l_c.item() == pytest.approx(want.item(), rel=1e-6)


def test_pad_positions_pull_only_on_pad_logit():
    """At a pad position, the only logit the loss pushes up is index 256."""
    recon = torch.randn(1, 1, 4, 257, dtype=torch.float64, requires_grad=True)
    tokens = torch.tensor([[[5, 9, PAD, PAD]]])
    _, l_r, _ = joint_loss(recon, tokens, torch.zeros(1, 2, dtype=torch.float64),
                           torch.tensor([[1.0, 0.0]]), lam=0.0)
    (g,) = torch.autograd.grad(l_r, recon)
    for pos in (2, 3):
        neg = (g[0, 0, pos] < 0).nonzero().flatten().tolist()
        assert neg == [PAD]
    for pos, tok in ((0, 5), (1, 9)):
        assert (g[0, 0, pos] < 0).nonzero().flatten().tolist() == [tok]
        assert g[0, 0, pos, PAD] > 0


def test_pad_logit_bias_gets_gradient_from_pads():
    """Perturb the pad-logit bias: L_r moves only when pad targets are present."""
    model, _ = tiny_problem(3)
    full = torch.randint(0, 256, (1, 2, 6))
    with_pad = full.clone()
    with_pad[0, 0, 3:] = PAD
    label = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    bias = model.decoder.head.bias

    def l_r(tokens):
        recon, logits = model(tokens)
        return joint_loss(recon, tokens, logits, label)[1]

    g_pad = torch.autograd.grad(l_r(with_pad), bias)[0][PAD]
    g_full = torch.autograd.grad(l_r(full), bias)[0][PAD]
    assert g_full > 0 > g_pad


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed):
    errs = relative_errors(seed)
    assert len(errs) == len(list(TempestModel(tiny_config()).parameters()))
    bad = {k: v for k, v in errs.items() if v > 1e-4}
    assert not bad


def test_gradients_reject_non_finite():
    model, loss_fn = tiny_problem(0)
    with pytest.raises(NumericsError):
        gradients(lambda: loss_fn() * float("nan"), dict(model.named_parameters()))


@pytest.mark.parametrize("cfg", [ModelConfig(), small(), tiny_config(), small(P=0, C=0), small(L_prime=3, C=4)])
def test_param_count_matches_torch(cfg):
    assert param_count(cfg) == sum(p.numel() for p in TempestModel(cfg).parameters())


def test_default_param_count_in_range():
    assert 5.2e6 <= param_count(ModelConfig()) <= 6.4e6


@given(st.integers(0, 6), st.integers(1, 6))
@settings(max_examples=20)
def test_param_count_linear_in_depth(C, extra):
    a = ModelConfig(N=24, ff_dim=48, heads=4, C=C)
    b = ModelConfig(N=24, ff_dim=48, heads=4, C=C + extra)
    diff = param_count(b) - param_count(a)
    norm = 2 * 24 if C == 0 else 0  # the final LayerNorm appears with the first layer
    assert diff == extra * encoder_layer_params(a) + norm


def test_zero_layer_lower_bound():
    assert param_count(ModelConfig(P=0, C=0)) >= 257 * 216


def test_flops_monotone():
    for blocks in (31, 160):
        f = [flops_estimate(ModelConfig(P=p, C=9 - p), blocks) for p in (1, 2, 3)]
        assert f[0] < f[1] < f[2]
    assert flops_estimate(ModelConfig(P=3), 31) > flops_estimate(ModelConfig(P=2), 31)


def test_training_is_deterministic():
    data = byte_pattern_dataset(16, L_max=8)
    cfg = TrainConfig(model=small(L_max=8, num_classes=2), steps=10, batch_size=4, eval_interval=1, seed=5)
    _, m1 = fit(data, cfg)
    _, m2 = fit(data, cfg)
    assert len(m1) == 10 and m1 == m2
