import numpy as np
import pytest

from multigran import autograd as ag
from multigran import data as dio
from multigran import training
from multigran.errors import ContractError, DivergenceError
from multigran.model import init_model
from multigran.training import Adam, clip_global_norm


def test_clip_scales_by_global_norm():
    a = ag.tensor(np.zeros((3, 4)))
    b = ag.tensor(np.zeros(14))
    a.grad = np.full((3, 4), 5.0)                      # sum of squares: 300
    b.grad = np.zeros(14)
    b.grad[:4] = np.sqrt((50.0 ** 2 - 300.0) / 4.0)    # total: 2500, norm 50
    raw = clip_global_norm([a, b], 5.0)
    assert abs(raw - 50.0) < 1e-9
    # every gradient scaled by exactly 5/50 = 0.1
    assert np.allclose(a.grad, 0.5)


def test_clip_leaves_small_gradients_alone():
    a = ag.tensor(np.zeros(3))
    a.grad = np.array([0.3, 0.0, -0.4])  # norm 0.5
    raw = clip_global_norm([a], 5.0)
    assert abs(raw - 0.5) < 1e-12
    assert np.array_equal(a.grad, [0.3, 0.0, -0.4])


def test_adam_moves_toward_minimum():
    x = ag.tensor(np.array(4.0))
    opt = Adam([x], lr=0.1)
    for _ in range(200):
        with ag.Tape():
            ag.backward(ag.mul(x, x))
        opt.step()
    assert abs(float(x.values)) < 1e-2


def _toy_corpus(gen, count, pool_size, k, seq_len=4):
    pool = [list(gen.integers(1, 15, size=gen.integers(2, seq_len + 1)))
            for _ in range(pool_size)]
    examples = []
    for i in range(count):
        gt = int(gen.integers(0, pool_size))
        negatives = [int(j) for j in gen.choice(
            [j for j in range(pool_size) if j != gt], size=k - 1, replace=False)]
        ctx = list(gen.integers(1, 15, size=gen.integers(2, 6)))
        examples.append(dio.TrainingExample(ctx, gt, negatives, None))
    return pool, examples


def _toy_valid(gen, count, k):
    out = []
    for _ in range(count):
        ctx = list(gen.integers(1, 15, size=gen.integers(2, 6)))
        cands = [list(gen.integers(1, 15, size=3)) for _ in range(k)]
        out.append((ctx, cands, int(gen.integers(0, k))))
    return out


def test_train_is_deterministic(tmp_path):
    gen = np.random.Generator(np.random.PCG64(0))
    pool, examples = _toy_corpus(gen, 24, 30, k=4)
    valid = _toy_valid(gen, 8, 4)

    def run(subdir):
        model = init_model(15, 4, 5, seed=1, vocab_hash="toy")
        training.train(model, examples, pool, valid, epochs=2, lr=0.005, batch_size=8,
                       clip_norm=5.0, seed=99, checkpoint_dir=tmp_path / subdir)
        return {n: t.values.copy() for n, t in model.tensors().items()}

    first = run("a")
    second = run("b")
    for name in first:
        assert np.array_equal(first[name], second[name]), name


def test_train_selects_best_epoch_and_checkpoints_every_epoch(tmp_path):
    gen = np.random.Generator(np.random.PCG64(3))
    pool, examples = _toy_corpus(gen, 20, 25, k=3)
    valid = _toy_valid(gen, 6, 3)
    model = init_model(15, 4, 5, seed=2, vocab_hash="toy")
    result = training.train(model, examples, pool, valid, epochs=3, lr=0.005, batch_size=8,
                            clip_norm=5.0, seed=5, checkpoint_dir=tmp_path / "run")
    assert len(result.epochs) == 3
    assert all((tmp_path / "run" / f"epoch_{e:03d}.ckpt").exists() for e in (1, 2, 3))
    best = max(result.epochs, key=lambda r: r.valid_mrr)
    assert result.best.valid_mrr == best.valid_mrr
    top2 = result.top_checkpoints(2)
    assert len(top2) == 2 and top2[0] == result.best.checkpoint


def test_train_rejects_mismatched_negative_counts():
    gen = np.random.Generator(np.random.PCG64(4))
    pool, examples = _toy_corpus(gen, 6, 10, k=3)
    examples[2].negative_indices = examples[2].negative_indices[:1]
    model = init_model(15, 4, 5, seed=0, vocab_hash="toy")
    with pytest.raises(ContractError):
        training.train(model, examples, pool, _toy_valid(gen, 2, 3), epochs=1, lr=0.01,
                       batch_size=4, clip_norm=5.0, seed=0)


def test_divergence_diagnostic_names_the_batch():
    gen = np.random.Generator(np.random.PCG64(5))
    pool, examples = _toy_corpus(gen, 10, 12, k=3)
    model = init_model(15, 4, 5, seed=0, vocab_hash="toy")
    model.context_encoder.embedding.values[...] = np.nan
    with pytest.raises(DivergenceError, match=r"epoch 1, batch 0"):
        training.train(model, examples, pool, _toy_valid(gen, 2, 3), epochs=1, lr=0.01,
                       batch_size=4, clip_norm=5.0, seed=0)


def test_train_accepts_per_epoch_resampler(tmp_path):
    gen = np.random.Generator(np.random.PCG64(6))
    pool, examples = _toy_corpus(gen, 16, 20, k=3)
    seen = []

    def resampler(epoch):
        seen.append(epoch)
        fresh = np.random.Generator(np.random.PCG64(epoch))
        pool2, examples2 = _toy_corpus(fresh, 16, 20, k=3)
        return examples2

    model = init_model(15, 4, 5, seed=1, vocab_hash="toy")
    training.train(model, examples, pool, _toy_valid(gen, 4, 3), epochs=3, lr=0.01,
                   batch_size=8, clip_norm=5.0, seed=0, resampler=resampler)
    assert seen == [1, 2]  # fresh draws for every epoch after the first


def test_training_beats_untrained_validation_mrr(tmp_path):
    from multigran.data import GeneratorSpec, builtin_topics, build_vocab, eval_examples
    from multigran.data import generate_synthetic_corpus
    from multigran.sampling import NegativeSampler

    spec = GeneratorSpec(topics=builtin_topics(5), train_dialogs=200, valid_dialogs=60,
                         test_dialogs=60, candidates=5)
    splits = generate_synthetic_corpus(spec, seed=17)
    vocab = build_vocab(splits["train"], max_size=500)
    sampler = NegativeSampler(splits["train"], vocab, k=5, seed=17, truncation=160)
    examples = sampler.corpus(None)
    valid = eval_examples(splits["valid"], vocab, 160)

    model = init_model(vocab.size, 12, 16, seed=17, vocab_hash=vocab.content_hash)
    untrained = training.validation_mrr(model, valid)
    result = training.train(model, examples, sampler.responses, valid, epochs=20, lr=0.005,
                            batch_size=32, clip_norm=5.0, seed=17,
                            checkpoint_dir=tmp_path / "ckpt")
    assert result.best.valid_mrr > untrained
