"""Masking semantics, pretraining loss mechanics, fine-tuning, weight
transfer, and checkpoint round-trips."""

import numpy as np
import pytest

from ddikit import autodiff as ad
from ddikit.autodiff import Tape, backward
from ddikit.checkpoint import (CheckpointError, config_fingerprint,
                               load_checkpoint, read_checkpoint,
                               save_checkpoint)
from ddikit.data import DdiEvent, DrugRecord
from ddikit.fixtures import make_dataset_fixture, random_smiles_corpus
from ddikit.model import DdiModel, ModelConfig, PretrainModel, transfer_encoder_weights
from ddikit.optim import AdamState, adam_step, zero_grads
from ddikit.smiles import MASK, PAD, SEP, Vocabulary, encode_pair
from ddikit.training import (FinetuneConfig, PretrainConfig, finetune,
                             make_pretrain_pairs, mask_sequence, mlm_pretrain,
                             predict_scores)


def small_config(vocab_size, n_classes=3, **over):
    base = dict(vocab_size=vocab_size, n_classes=n_classes, d_model=8,
                n_layers=1, n_heads=2, d_ff=8, max_len=32, kg_dim=8,
                kg_heads=2, conv_blocks=2, mlp1_hidden=8, mlp1_out=8,
                mlp2_hidden=8, dropout=0.0)
    base.update(over)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# masking
# ---------------------------------------------------------------------------

def test_mask_count_100_real_tokens_gives_15():
    v = Vocabulary.build(["C"])
    seq = encode_pair("C" * 70, "C" * 29, v, max_len=120)  # 100 real tokens
    assert seq.n_real == 100
    masked, plan = mask_sequence(seq, 0.15, np.random.default_rng(0))
    assert len(plan.positions) == 15
    assert (masked[plan.positions] == MASK).all()


def test_mask_minimum_one_token():
    v = Vocabulary.build(["C"])
    seq = encode_pair("C", "C", v, max_len=16)
    masked, plan = mask_sequence(seq, 0.01, np.random.default_rng(0))
    assert len(plan.positions) == 1


def test_mask_never_hits_pad_or_sep():
    v = Vocabulary.build(["CCO", "CCN"])
    seq = encode_pair("CCO", "CCN", v, max_len=20)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        masked, plan = mask_sequence(seq, 0.5, rng)
        assert (seq.ids[plan.positions] != SEP).all()
        assert (seq.ids[plan.positions] != PAD).all()
        assert seq.attention_mask[plan.positions].all()
        # non-picked positions unchanged
        untouched = np.setdiff1d(np.arange(20), plan.positions)
        assert (masked[untouched] == seq.ids[untouched]).all()
        assert (plan.original_ids == seq.ids[plan.positions]).all()


def test_mask_rate_respects_eligible_count():
    v = Vocabulary.build(["C"])
    seq = encode_pair("C" * 5, "C" * 4, v, max_len=32)  # 9 eligible, 1 SEP
    masked, plan = mask_sequence(seq, 0.15, np.random.default_rng(1))
    assert len(plan.positions) == max(1, round(0.15 * 9))


def test_make_pretrain_pairs_never_self():
    rng = np.random.default_rng(0)
    for n in (2, 3, 10):
        pairs = make_pretrain_pairs(n, rng)
        assert len(pairs) == n
        assert all(i != j for i, j in pairs)
        assert [i for i, _ in pairs] == list(range(n))


# ---------------------------------------------------------------------------
# MLM pretraining
# ---------------------------------------------------------------------------

def test_mlm_gradient_zero_at_unmasked_positions():
    """The loss only reads masked positions, so token-embedding rows of ids
    that never appear in the batch get no gradient."""
    corpus = ["CCO", "CCN"]
    vocab = Vocabulary.build(corpus)
    cfg = small_config(len(vocab), dtype="float64")
    model = PretrainModel(cfg, seed=0)
    seq = encode_pair("CCO", "CCN", vocab, cfg.max_len)
    ids = seq.ids[None, :].copy()
    flat_positions = np.array([0])  # only position 0 is masked
    targets = np.array([ids[0, 0]])
    ids[0, 0] = MASK
    zero_grads(model.parameters())
    tape = Tape()
    with tape:
        loss = ad.cross_entropy_loss(
            model.masked_logits(ids, seq.segment_ids[None, :],
                                seq.attention_mask[None, :], flat_positions),
            targets)
    backward(loss, tape)
    grad = model.parameters()["lm_head.b"].grad
    assert grad is not None and np.abs(grad).sum() > 0
    # an id absent from the input sees no token-embedding gradient
    tok_grad = model.parameters()["embed.token"].grad
    absent = [i for i in range(len(vocab)) if i not in set(ids[0]) | {PAD}]
    assert absent
    assert not tok_grad[absent].any()


def test_mlm_pretrain_reduces_loss():
    rng = np.random.default_rng(0)
    corpus = random_smiles_corpus(12, rng)
    vocab = Vocabulary.build(corpus)
    mcfg = small_config(len(vocab))
    model = PretrainModel(mcfg, seed=0)
    pcfg = PretrainConfig(epochs=12, batch_size=4, learning_rate=3e-3,
                          max_len=32, seed=0)
    history = mlm_pretrain(model, corpus, vocab, pcfg)
    assert len(history) == 12
    assert history[-1] < history[0]
    assert history[0] == pytest.approx(np.log(len(vocab)), rel=0.25)


def test_pretrain_config_validates_rate():
    with pytest.raises(ValueError):
        PretrainConfig(mask_rate=0.0)


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------

def tiny_world(tmp_path, seed=0):
    paths = make_dataset_fixture(tmp_path / "fix", n_drugs=10, n_events=30,
                                 n_classes=3, seed=seed)
    from ddikit.data import load_dataset
    drugs, events, label_map = load_dataset(paths["drugs"], paths["events"],
                                            paths["labels"])
    vocab = Vocabulary.build([d.smiles for d in drugs.values()])
    rng = np.random.default_rng(seed)
    pair_vecs = rng.standard_normal((len(events), 8))
    return drugs, events, label_map, vocab, pair_vecs


def test_finetune_runs_and_records_history(tmp_path):
    drugs, events, label_map, vocab, pair_vecs = tiny_world(tmp_path)
    cfg = small_config(len(vocab), n_classes=len(label_map))
    model = DdiModel(cfg, seed=0)
    fcfg = FinetuneConfig(epochs=3, batch_size=8, learning_rate=1e-3,
                          max_len=cfg.max_len, seed=0)
    train_idx = list(range(20))
    eval_idx = list(range(20, 30))
    history, best = finetune(model, train_idx, eval_idx, events, drugs, vocab,
                             pair_vecs, fcfg)
    assert len(history) == 3
    assert best == max(r.eval_accuracy for r in history)
    assert all(np.isfinite(r.train_loss) for r in history)


def test_finetune_rejects_out_of_range_label(tmp_path):
    drugs, events, label_map, vocab, pair_vecs = tiny_world(tmp_path)
    cfg = small_config(len(vocab), n_classes=2)  # fixture has 3 classes
    model = DdiModel(cfg, seed=0)
    fcfg = FinetuneConfig(epochs=1, max_len=cfg.max_len)
    bad = [i for i, ev in enumerate(events) if ev.label >= 2]
    with pytest.raises(ValueError, match="n_classes"):
        finetune(model, bad[:1], [], events, drugs, vocab, pair_vecs, fcfg)


def test_predict_scores_rows_are_distributions(tmp_path):
    drugs, events, label_map, vocab, pair_vecs = tiny_world(tmp_path)
    cfg = small_config(len(vocab), n_classes=len(label_map))
    model = DdiModel(cfg, seed=0)
    scores = predict_scores(model, list(range(10)), events, drugs, vocab,
                            pair_vecs, batch_size=4, max_len=cfg.max_len)
    assert scores.shape == (10, len(label_map))
    assert np.allclose(scores.sum(axis=1), 1.0, atol=1e-5)
    assert model.training  # restored afterwards


def test_predict_scores_deterministic(tmp_path):
    drugs, events, label_map, vocab, pair_vecs = tiny_world(tmp_path)
    cfg = small_config(len(vocab), n_classes=len(label_map))
    model = DdiModel(cfg, seed=0)
    a = predict_scores(model, [0, 1, 2], events, drugs, vocab, pair_vecs,
                       batch_size=2, max_len=cfg.max_len)
    b = predict_scores(model, [0, 1, 2], events, drugs, vocab, pair_vecs,
                       batch_size=2, max_len=cfg.max_len)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_identical(tmp_path):
    vocab = Vocabulary.build(["CCO", "CCN"])
    cfg = small_config(len(vocab))
    model = DdiModel(cfg, seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, epoch=5, extra={"note": 1})

    model2 = DdiModel(cfg, seed=99)
    meta = load_checkpoint(path, model2)
    assert meta["epoch"] == 5
    assert meta["extra"] == {"note": 1}
    for name, p in model.parameters().items():
        assert np.array_equal(p.data, model2.parameters()[name].data)
    for name, b in model.buffers().items():
        assert np.array_equal(b, model2.buffers()[name])

    # forward passes agree bit for bit
    model.eval()
    model2.eval()
    rng = np.random.default_rng(0)
    ids = rng.integers(4, len(vocab), size=(2, cfg.max_len))
    segs = np.zeros_like(ids)
    mask = np.ones_like(ids, dtype=bool)
    pair = rng.standard_normal((2, cfg.kg_dim))
    from ddikit.autodiff import no_grad
    with no_grad():
        a = model.forward(ids, segs, mask, pair).data
        b = model2.forward(ids, segs, mask, pair).data
    assert np.array_equal(a, b)


def test_checkpoint_restores_optimizer_state(tmp_path):
    vocab = Vocabulary.build(["CCO"])
    cfg = small_config(len(vocab), dtype="float64")
    model = DdiModel(cfg, seed=0)
    opt = AdamState(learning_rate=1e-3, weight_decay=1e-5)
    rng = np.random.default_rng(0)
    ids = rng.integers(4, len(vocab), size=(2, cfg.max_len))
    segs = np.zeros_like(ids)
    mask = np.ones_like(ids, dtype=bool)
    pair = rng.standard_normal((2, cfg.kg_dim))
    targets = np.array([0, 1])

    def step(m, o):
        zero_grads(m.parameters())
        tape = Tape()
        with tape:
            loss = ad.cross_entropy_loss(m.forward(ids, segs, mask, pair), targets)
        backward(loss, tape)
        adam_step(m.parameters(), o)

    step(model, opt)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, optimizer=opt, epoch=1)

    model2 = DdiModel(cfg, seed=7)
    opt2 = AdamState(learning_rate=0.0)
    load_checkpoint(path, model2, optimizer=opt2)
    assert opt2.step_count == 1
    assert opt2.learning_rate == 1e-3

    # one more identical step from the restored state matches exactly
    step(model, opt)
    step(model2, opt2)
    for name, p in model.parameters().items():
        assert np.array_equal(p.data, model2.parameters()[name].data)


def test_checkpoint_fingerprint_mismatch(tmp_path):
    vocab = Vocabulary.build(["CCO"])
    model = DdiModel(small_config(len(vocab)), seed=0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    other = DdiModel(small_config(len(vocab), n_classes=4), seed=0)
    with pytest.raises(CheckpointError, match="fingerprint"):
        load_checkpoint(path, other)


def test_checkpoint_corrupt_file_errors(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"JUNKJUNKJUNKJUNK")
    with pytest.raises(CheckpointError):
        read_checkpoint(p)
    vocab = Vocabulary.build(["CCO"])
    model = DdiModel(small_config(len(vocab)), seed=0)
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, model)
    blob = good.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(blob[:len(blob) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(tmp_path / "trunc.ckpt")


def test_config_fingerprint_is_key_order_invariant():
    a = config_fingerprint({"x": 1, "y": 2})
    b = config_fingerprint({"y": 2, "x": 1})
    assert a == b
    assert a != config_fingerprint({"x": 1, "y": 3})


def test_transfer_then_finetune_probe(tmp_path):
    """Transferred encoder weights produce the same logits as the source
    encoder on a probe batch fed through both models' shared trunk."""
    corpus = ["CCO", "CCN", "CCC"]
    vocab = Vocabulary.build(corpus)
    cfg = small_config(len(vocab))
    src = PretrainModel(cfg, seed=1)
    dst = DdiModel(cfg, seed=2)
    transfer_encoder_weights(src, dst)
    src.eval()
    dst.eval()
    seq = encode_pair("CCO", "CCN", vocab, cfg.max_len)
    from ddikit.autodiff import no_grad
    with no_grad():
        a = src.encode(seq.ids[None], seq.segment_ids[None], seq.attention_mask[None]).data
        b = dst.encode(seq.ids[None], seq.segment_ids[None], seq.attention_mask[None]).data
    assert np.array_equal(a, b)
