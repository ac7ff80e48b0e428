import hashlib
import logging

import numpy as np
import pytest

from multigran import data as dio
from multigran import probing
from multigran.errors import ConfigurationError, ContractError, IntegrityError
from multigran.model import init_model
from multigran.store import read_tensor_file, write_tensor_file


def test_probe_task_validation():
    with pytest.raises(ConfigurationError):
        probing.ProbeTask(kind="bag_of_words", label_dim=0, targets=np.zeros((3, 0)))
    with pytest.raises(ConfigurationError):
        probing.ProbeTask(kind="bag_of_words", label_dim=4, targets=np.zeros((3, 2)))


def corpus(seed=0):
    spec = dio.GeneratorSpec(topics=dio.builtin_topics(5), train_dialogs=200,
                             valid_dialogs=60, test_dialogs=60, candidates=6)
    splits = dio.generate_synthetic_corpus(spec, seed=seed)
    vocab = dio.build_vocab(splits["train"], max_size=600)
    return splits, vocab


def test_bow_targets_mark_last_utterance_words():
    splits, vocab = corpus()
    task = probing.bow_task(splits["train"], vocab)
    assert task.label_dim == vocab.content_size
    offset = len(dio.RESERVED_TOKENS)
    for row, ex in zip(task.targets[:20], splits["train"][:20]):
        expected = np.zeros(vocab.content_size)
        for tok in dio.tokenize(ex.last_utterance()):
            idx = vocab.token_to_id.get(tok)
            if idx is not None and idx >= offset:
                expected[idx - offset] = 1.0
        assert np.array_equal(row, expected)


def test_topic_targets_one_hot():
    splits, _ = corpus()
    task = probing.topic_task(splits["valid"], num_topics=5)
    assert np.array_equal(task.targets.sum(axis=1), np.ones(len(splits["valid"])))
    plain = dio.DialogExample(dialog_id="x", turns=[("usr", "hello")], response="hi")
    with pytest.raises(ContractError):
        probing.topic_task([plain], num_topics=5)


def params_digest(model):
    digest = hashlib.sha256()
    for name in sorted(model.tensors()):
        digest.update(model.tensors()[name].values.tobytes())
    return digest.hexdigest()


def test_freeze_and_encode_deterministic_and_frozen():
    splits, vocab = corpus()
    model = init_model(vocab.size, 6, 8, seed=3, vocab_hash=vocab.content_hash)
    contexts = [dio.context_token_ids(ex, vocab, 160) for ex in splits["valid"]]
    before = params_digest(model)
    a = probing.freeze_and_encode(model, contexts)
    b = probing.freeze_and_encode(model, contexts)
    assert np.array_equal(a, b)
    assert params_digest(model) == before


def test_feature_cache_hit_and_stale_detection(tmp_path, caplog):
    splits, vocab = corpus()
    model = init_model(vocab.size, 6, 8, seed=4, vocab_hash=vocab.content_hash)
    contexts = [dio.context_token_ids(ex, vocab, 160) for ex in splits["valid"][:20]]
    first = probing.freeze_and_encode(model, contexts, fingerprint="fp-A", cache_dir=tmp_path)
    with caplog.at_level(logging.INFO, logger="multigran.probing"):
        second = probing.freeze_and_encode(model, contexts, fingerprint="fp-A",
                                           cache_dir=tmp_path)
    assert np.array_equal(first, second)
    assert any("cache hit" in rec.message for rec in caplog.records)
    # corrupt the cached metadata: a stale entry under this key must be refused
    cache_file = next(tmp_path.glob("feat_*.tensors"))
    meta, tensors = read_tensor_file(cache_file)
    meta["fingerprint"] = "fp-B"
    write_tensor_file(cache_file, meta, tensors)
    with pytest.raises(IntegrityError):
        probing.freeze_and_encode(model, contexts, fingerprint="fp-A", cache_dir=tmp_path)


def test_probe_learns_linearly_separable_features():
    gen = np.random.Generator(np.random.PCG64(5))
    w = gen.normal(size=(6, 10))
    w /= np.linalg.norm(w, axis=1, keepdims=True)

    def sample(count):
        # separable with a margin: no point sits close to any label boundary
        rows = []
        while len(rows) < count:
            x = gen.normal(size=(4 * count, 10))
            keep = np.abs(x @ w.T).min(axis=1) > 0.4
            rows.extend(x[keep])
        x = np.stack(rows[:count])
        return x, (x @ w.T > 0).astype(np.float64)

    x_train, y_train = sample(500)
    x_valid, y_valid = sample(200)
    t_train = probing.ProbeTask("bag_of_words", 6, y_train)
    t_valid = probing.ProbeTask("bag_of_words", 6, y_valid)
    cfg = probing.ProbeConfig(lr=0.05, epochs=300, batch_size=128, seed=0)
    _, result = probing.train_probe(x_train, t_train, x_valid, t_valid, cfg)
    assert result.micro_f1 > 0.99


def test_probe_on_random_features_matches_permutation_baseline():
    gen = np.random.Generator(np.random.PCG64(6))
    x = gen.normal(size=(600, 8))
    labels = gen.integers(0, 2, size=(600, 4)).astype(np.float64)
    t = probing.ProbeTask("bag_of_words", 4, labels)
    cfg = probing.ProbeConfig(lr=0.02, epochs=20, batch_size=128, seed=1)
    _, real = probing.train_probe(x[:400], probing.ProbeTask("bag_of_words", 4, labels[:400]),
                                  x[400:], probing.ProbeTask("bag_of_words", 4, labels[400:]),
                                  cfg)
    permuted = labels[gen.permutation(600)]
    _, baseline = probing.train_probe(
        x[:400], probing.ProbeTask("bag_of_words", 4, permuted[:400]),
        x[400:], probing.ProbeTask("bag_of_words", 4, permuted[400:]), cfg)
    assert abs(real.micro_f1 - baseline.micro_f1) < 0.08


def test_all_zero_label_column_excluded(caplog):
    gen = np.random.Generator(np.random.PCG64(7))
    x = gen.normal(size=(200, 6))
    labels = gen.integers(0, 2, size=(200, 3)).astype(np.float64)
    labels[:, 1] = 0.0
    task = probing.ProbeTask("bag_of_words", 3, labels)
    cfg = probing.ProbeConfig(lr=0.05, epochs=5, batch_size=64, seed=2)
    with caplog.at_level(logging.INFO, logger="multigran.probing"):
        _, result = probing.train_probe(x[:150], probing.ProbeTask("bag_of_words", 3, labels[:150]),
                                        x[150:], probing.ProbeTask("bag_of_words", 3, labels[150:]),
                                        cfg)
    assert result.excluded_labels == 1
    assert any("all-zero label columns" in rec.message for rec in caplog.records)


def test_micro_f1_perfect_and_formula():
    preds = np.array([[1.0, 0.0], [0.0, 1.0]])
    f1, precision, recall = probing.micro_f1(preds, preds)
    assert (f1, precision, recall) == (1.0, 1.0, 1.0)
    targets = np.array([[1.0, 0.0], [1.0, 0.0]])
    guess = np.array([[1.0, 1.0], [0.0, 0.0]])
    f1, precision, recall = probing.micro_f1(guess, targets)
    # tp=1, fp=1, fn=1 -> P=R=0.5 -> F1=0.5
    assert (f1, precision, recall) == (0.5, 0.5, 0.5)


def test_spearman_oracles():
    assert probing.spearman([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
    assert probing.spearman([1, 2, 3, 4], [8, 6, 4, 2]) == -1.0
    assert abs(probing.spearman([1, 2, 3], [1, 1, 1])) == 0.0
    with pytest.raises(ContractError):
        probing.spearman([1], [2])


def test_granularity_sweep_single_level_skips_correlation():
    gen = np.random.Generator(np.random.PCG64(8))
    x = {1: gen.normal(size=(120, 6))}
    xv = {1: gen.normal(size=(40, 6))}
    xt = {1: gen.normal(size=(40, 6))}
    labels = (gen.normal(size=(120, 3)) > 0).astype(float)
    tasks = {"bag_of_words": probing.ProbeTask("bag_of_words", 3, labels)}
    valid_tasks = {"bag_of_words": probing.ProbeTask("bag_of_words", 3,
                                                     (gen.normal(size=(40, 3)) > 0).astype(float))}
    test_tasks = {"bag_of_words": probing.ProbeTask("bag_of_words", 3,
                                                    (gen.normal(size=(40, 3)) > 0).astype(float))}
    cfg = probing.ProbeConfig(lr=0.05, epochs=3, batch_size=64, seed=3)
    sweep = probing.granularity_sweep(x, tasks, xv, valid_tasks, xt, test_tasks, cfg)
    assert len(sweep["results"]) == 1
    assert sweep["results"][0].level == 1
    assert sweep["spearman"] == {}


def test_finetune_updates_encoder_parameters():
    splits, vocab = corpus(seed=9)
    model = init_model(vocab.size, 6, 8, seed=10, vocab_hash=vocab.content_hash)
    contexts = [dio.context_token_ids(ex, vocab, 160) for ex in splits["train"][:60]]
    task = probing.topic_task(splits["train"][:60], num_topics=5)
    valid_ctx = [dio.context_token_ids(ex, vocab, 160) for ex in splits["valid"][:30]]
    valid_task = probing.topic_task(splits["valid"][:30], num_topics=5)
    test_ctx = [dio.context_token_ids(ex, vocab, 160) for ex in splits["test"][:30]]
    test_task = probing.topic_task(splits["test"][:30], num_topics=5)
    before = params_digest(model)
    cfg = probing.ProbeConfig(lr=0.01, epochs=1, batch_size=32, seed=4)
    result = probing.finetune_probe(
        model, contexts, task,
        lambda m: probing.freeze_and_encode(m, valid_ctx),
        valid_task, test_ctx, test_task, cfg, encoder_epochs=2)
    assert params_digest(model) != before
    assert 0.0 <= result.micro_f1 <= 1.0
