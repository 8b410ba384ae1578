import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from tempest.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from tempest.errors import ConfigError, DatasetError, EmptyInput, TempestError
from tempest.harness import (
    Manifest, ManifestEntry, Prediction, Task, TrainConfig, average_precision, bench, cross_validate,
    ensemble_variants, evaluate, evaluate_examples, fit, mean_average_precision, multirate_infer,
    predict_probs, read_manifest, score, train,
)
from tempest.model import ModelConfig, TempestModel, param_count
from tempest.parsers import synth_mp3_stream
from tempest.synthetic import byte_pattern_dataset, dialect_dataset

TOY_MODEL = dict(N=32, ff_dim=64, P=1, C=1, L_max=144, heads=4, num_classes=2)


def toy_cfg(**kw) -> TrainConfig:
    base = dict(model=ModelConfig(**TOY_MODEL), steps=40, batch_size=8, lr=3e-3, eval_interval=20, max_blocks=6)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def trained(toy_manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    ckpt, metrics = train(read_manifest(toy_manifest), toy_cfg(), out, eval_split="test")
    return ckpt, metrics, out


# -- manifests ----------------------------------------------------------------

def test_manifest_roundtrip(tmp_path):
    m = Manifest([ManifestEntry("a.mp3", (0, 2), "train", 1), ManifestEntry("b.mp3", (1,), "test")], 3,
                 Task.MULTI_LABEL)
    p = tmp_path / "m.jsonl"
    m.dump(p)
    back = read_manifest(p)
    assert back.num_classes == 3 and back.task is Task.MULTI_LABEL
    assert [e.labels for e in back.entries] == [(0, 2), (1,)]
    assert back.entries[0].path == str(tmp_path / "a.mp3") and back.folds == [1]
    assert back.label_vector(back.entries[0]).tolist() == [1, 0, 1]


def test_manifest_validation(tmp_path):
    with pytest.raises(DatasetError):
        Manifest([ManifestEntry("a", (3,))], 3)
    with pytest.raises(DatasetError):
        Manifest([ManifestEntry("a", (0, 1))], 3)
    with pytest.raises(DatasetError):
        Manifest([ManifestEntry("a", (0,)), ManifestEntry("a", (1,))], 3)
    p = tmp_path / "bad.jsonl"
    p.write_text('{"path": "x"}\n')
    with pytest.raises(DatasetError):
        read_manifest(p)


def test_fold_split_is_disjoint(toy_manifest):
    m = read_manifest(toy_manifest)
    for f in m.folds:
        tr, held = m.fold_split(f)
        assert held and not ({e.path for e in tr} & {e.path for e in held})
        assert all(e.fold == f for e in held)


def test_unparseable_files_skipped(tmp_path, toy_manifest):
    m = read_manifest(toy_manifest)
    junk = tmp_path / "junk.mp3"
    junk.write_bytes(bytes(300))
    entries = m.split("train")[:2] + [ManifestEntry(str(junk), (0,))]
    from tempest.harness import load_examples

    assert len(load_examples(entries, m, toy_cfg())) == 2
    with pytest.raises(DatasetError):
        load_examples([ManifestEntry(str(junk), (0,))], m, toy_cfg())


# -- training and checkpoints ---------------------------------------------------

def test_train_writes_metrics_and_checkpoint(trained):
    ckpt, metrics, out = trained
    lines = [json.loads(x) for x in (out / "metrics.jsonl").read_text().splitlines()]
    assert lines == json.loads(json.dumps(metrics))
    assert [r["step"] for r in lines] == [20, 40]
    assert {"loss", "L_r", "L_c", "train_acc", "lr", "eval_accuracy"} <= set(lines[0])
    assert lines[-1]["train_acc"] >= 0.9


def test_checkpoint_roundtrip_same_metrics(trained, toy_manifest, tmp_path):
    ckpt, _, _ = trained
    model, extra = load_checkpoint(ckpt)
    assert extra["max_blocks"] == 6
    m = read_manifest(toy_manifest)
    a = evaluate(ckpt, m, "test")
    p = tmp_path / "again.tmpc"
    save_checkpoint(p, model, extra)
    assert p.read_bytes() == ckpt.read_bytes()
    assert evaluate(p, m, "test") == a
    assert a["accuracy"] >= 0.75 and "fold_mean" in a


def test_checkpoint_tensors_match(tmp_path):
    torch.manual_seed(0)
    model = TempestModel(ModelConfig(**TOY_MODEL))
    p = tmp_path / "c.tmpc"
    save_checkpoint(p, model, {"k": 1})
    header, tensors = read_checkpoint(p)
    assert header["model"] == model.cfg.to_dict() and header["extra"] == {"k": 1}
    for name, t in model.state_dict().items():
        assert np.array_equal(tensors[name], t.numpy())
    assert sum(v.size for v in tensors.values()) == param_count(model.cfg)


@pytest.mark.parametrize("cut", [3, 20, -7])
def test_corrupt_checkpoint(tmp_path, cut):
    model = TempestModel(ModelConfig(**TOY_MODEL))
    p = tmp_path / "c.tmpc"
    save_checkpoint(p, model)
    p.write_bytes(p.read_bytes()[:cut])
    with pytest.raises(TempestError):
        read_checkpoint(p)


def test_train_is_deterministic(toy_manifest, tmp_path):
    m = read_manifest(toy_manifest)
    cfg = toy_cfg(steps=10, eval_interval=1)
    _, a = train(m, cfg, tmp_path / "a")
    _, b = train(m, cfg, tmp_path / "b")
    assert a == b
    assert (tmp_path / "a" / "checkpoint.tmpc").read_bytes() == (tmp_path / "b" / "checkpoint.tmpc").read_bytes()


def test_class_count_mismatch(toy_manifest, trained):
    m = read_manifest(toy_manifest)
    with pytest.raises(ConfigError):
        train(m, toy_cfg(model=ModelConfig(**{**TOY_MODEL, "num_classes": 3})), "/tmp/never")
    three = Manifest(m.entries, 3)
    with pytest.raises(ConfigError):
        evaluate(trained[0], three)


def test_recon_weight_changes_trajectory():
    data = byte_pattern_dataset(16, L_max=8)
    model = ModelConfig(N=16, ff_dim=32, P=1, C=1, L_max=8, heads=4, num_classes=2)
    _, joint = fit(data, TrainConfig(model=model, steps=10, batch_size=8, eval_interval=5))
    _, cls_only = fit(data, TrainConfig(model=model, steps=10, batch_size=8, eval_interval=5, recon_weight=0.0))
    assert joint[0]["L_c"] != cls_only[0]["L_c"]
    assert cls_only[0]["loss"] == pytest.approx(cls_only[0]["L_c"])


def test_multi_rate_and_cutmix_training_runs():
    data = dialect_dataset(32, L_max=8)
    model = ModelConfig(N=16, ff_dim=32, P=1, C=1, L_max=8, heads=4, num_classes=2)
    _, met = fit(data, TrainConfig(model=model, steps=6, batch_size=8, eval_interval=3, cutmix=True, cutmix_prob=1.0),
                 eval_examples=data[:8])
    assert len(met) == 2 and all(np.isfinite(r["loss"]) for r in met)


def test_cross_validate(toy_manifest, tmp_path):
    m = read_manifest(toy_manifest)
    two_folds = Manifest([ManifestEntry(e.path, e.labels, e.split, e.fold % 2) for e in m.entries], 2)
    res = cross_validate(two_folds, toy_cfg(steps=5, eval_interval=5), tmp_path)
    assert set(res["folds"]) == {0, 1}
    assert res["mean"] == pytest.approx(np.mean(list(res["folds"].values())))


# -- inference --------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_model():
    torch.manual_seed(3)
    return TempestModel(ModelConfig(N=16, ff_dim=32, P=1, C=1, L_max=450, heads=4, num_classes=3)).eval()


def _streams(n):
    return [synth_mp3_stream(3 + i, 128000, 44100, i) for i in range(n)]


def test_multirate_single_stream_is_plain_inference(small_model):
    from tempest.parsers import mp3_scan_frames
    from tempest.tokenizer import tokenize_stream

    s = _streams(1)
    plain = predict_probs(small_model, [tokenize_stream(mp3_scan_frames(s[0]), 450)])[0]
    assert np.array_equal(multirate_infer(small_model, s).probs, plain)


@given(st.permutations(range(4)))
@settings(max_examples=10)
def test_multirate_permutation_invariant(small_model, perm):
    s = _streams(4)
    base = multirate_infer(small_model, s).probs
    assert np.array_equal(multirate_infer(small_model, [s[i] for i in perm]).probs, base)


def test_multirate_duplicate_idempotent(small_model):
    s = _streams(1)
    assert np.array_equal(multirate_infer(small_model, s * 3).probs, multirate_infer(small_model, s).probs)


def test_multirate_errors_and_checkpoint_path(small_model, tmp_path):
    with pytest.raises(EmptyInput):
        multirate_infer(small_model, [])
    p = tmp_path / "m.tmpc"
    save_checkpoint(p, small_model)
    got = multirate_infer(p, _streams(2)).probs
    np.testing.assert_allclose(got, multirate_infer(small_model, _streams(2)).probs, atol=1e-6)
    logit = multirate_infer(small_model, _streams(2), aggregate="logit")
    assert abs(logit.probs.sum() - 1) < 1e-9


def test_mean_of_probabilities_arithmetic():
    probs = np.array([[0.6, 0.4], [0.2, 0.8]]).mean(axis=0)
    pred = Prediction(probs)
    assert probs.tolist() == pytest.approx([0.4, 0.6]) and pred.label == 1


def test_ensemble_matches_manual_mean(small_model):
    from tempest.parsers import mp3_scan_frames
    from tempest.tokenizer import tokenize_stream

    mats = [tokenize_stream(mp3_scan_frames(s), 450) for s in _streams(3)]
    manual = predict_probs(small_model, mats).mean(axis=0)
    assert np.allclose(ensemble_variants(small_model, mats).probs, manual, rtol=0, atol=1e-7)


# -- metrics ----------------------------------------------------------------------

def _brute_ap(scores, targets):
    """Average over positives of precision at that positive's rank."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranks = {i: r + 1 for r, i in enumerate(order)}
    pos = [i for i in range(len(scores)) if targets[i]]
    return np.mean([sum(1 for j in pos if ranks[j] <= ranks[i]) / ranks[i] for i in pos])


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=30))
def test_average_precision_brute_force(pairs):
    scores = np.array([p[0] for p in pairs])
    targets = np.array([p[1] for p in pairs], dtype=float)
    got = average_precision(scores, targets)
    if not targets.any():
        assert np.isnan(got)
    else:
        assert got == pytest.approx(_brute_ap(scores, targets))


def test_map_and_accuracy():
    targets = np.array([[1, 0], [0, 1], [1, 1]], dtype=float)
    assert mean_average_precision(targets.copy(), targets) == 1.0
    labels = np.eye(3)[[0, 1, 2, 1]]
    assert score(labels, labels, False)["accuracy"] == 1.0
    rng = np.random.default_rng(0)
    rand = rng.random((20_000, 50))
    chance = score(rand, np.eye(50)[rng.integers(0, 50, 20_000)], False)["accuracy"]
    assert abs(chance - 0.02) < 0.005


def test_evaluate_examples_class_mismatch(small_model):
    with pytest.raises(ConfigError):
        evaluate_examples(small_model, byte_pattern_dataset(4, L_max=450))


# -- bench ------------------------------------------------------------------------

def test_bench_reference_setting():
    r = bench(ModelConfig(), 1.0, 31)
    assert (r["tokens"], r["attention_entries"], r["byte_baseline_tokens"]) == (32, 1024, 2017)
    assert r["reported_flops_g"] == 16.85 and 5.2e6 <= r["params"] <= 6.4e6


def test_bench_L_prime_linear():
    one = bench(ModelConfig(L_prime=1), 5.0, 32)
    two = bench(ModelConfig(L_prime=2), 5.0, 32)
    assert two["tokens"] - 1 == 2 * (one["tokens"] - 1)
    assert (one["tps"], two["tps"]) == (32, 64)
    with pytest.raises(ConfigError):
        bench(ModelConfig(), 0, 31)
