"""Linear probes over frozen dialog-context representations.

A probe is a per-label logistic layer (sigmoid outputs, threshold 0.5)
trained with summed binary cross-entropy and Adam; the best epoch is chosen
by validation micro-F1. Encoder weights never change while probing: features
are extracted once outside any tape and cached on disk keyed by the source
checkpoint fingerprint. `finetune_probe` is the unfrozen variant that updates
the encoder too.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from . import encoder as enc
from .data import RESERVED_TOKENS, Vocabulary, context_token_ids, tokenize
from .errors import ConfigurationError, ContractError, DivergenceError, IntegrityError
from .model import DualEncoder
from .seeding import rng
from .store import read_tensor_file, write_tensor_file
from .training import Adam

log = logging.getLogger(__name__)

BOW_TASK = "bag_of_words"
ABSTRACT_TASK = "abstract_label"


@dataclass
class ProbeTask:
    kind: str
    label_dim: int
    targets: np.ndarray  # examples x label_dim, 0/1
    label_names: list = field(default_factory=list)

    def __post_init__(self):
        if self.label_dim <= 0:
            raise ConfigurationError("probe task needs a positive label dimension")
        if self.targets.ndim != 2 or self.targets.shape[1] != self.label_dim:
            raise ConfigurationError("probe targets must be examples x label_dim")


def bow_task(split, vocab: Vocabulary) -> ProbeTask:
    """Binary presence of each content-vocabulary word in the last context utterance."""
    names = list(vocab.id_to_token[len(RESERVED_TOKENS):])
    offset = len(RESERVED_TOKENS)
    targets = np.zeros((len(split), len(names)))
    for row, ex in enumerate(split):
        for tok in tokenize(ex.last_utterance()):
            idx = vocab.token_to_id.get(tok)
            if idx is not None and idx >= offset:
                targets[row, idx - offset] = 1.0
    return ProbeTask(kind=BOW_TASK, label_dim=len(names), targets=targets, label_names=names)


def topic_task(split, num_topics: int) -> ProbeTask:
    """One-hot latent topic of each dialog (the abstract-label stand-in)."""
    targets = np.zeros((len(split), num_topics))
    for row, ex in enumerate(split):
        if ex.topic is None:
            raise ContractError(f"example {ex.dialog_id} carries no topic label")
        targets[row, ex.topic] = 1.0
    return ProbeTask(kind=ABSTRACT_TASK, label_dim=num_topics, targets=targets,
                     label_names=[f"topic_{i}" for i in range(num_topics)])


# ---------------------------------------------------------------------------
# frozen feature extraction


def _context_hash(contexts) -> str:
    digest = hashlib.sha256()
    for ids in contexts:
        digest.update(json.dumps(list(map(int, ids))).encode())
    return digest.hexdigest()


def freeze_and_encode(model: DualEncoder, contexts, *, fingerprint: str = "",
                      cache_dir=None, batch_size: int = 128) -> np.ndarray:
    """Context vectors from the frozen context encoder; disk-cached by fingerprint."""
    ctx_hash = _context_hash(contexts)
    cache_path = None
    if cache_dir is not None and fingerprint:
        cache_path = Path(cache_dir) / f"feat_{fingerprint[:24]}_{ctx_hash[:16]}.tensors"
        if cache_path.exists():
            meta, tensors = read_tensor_file(cache_path)
            if meta.get("fingerprint") != fingerprint or meta.get("context_hash") != ctx_hash:
                raise IntegrityError(f"{cache_path}: stale feature cache for this fingerprint")
            log.info("feature cache hit: %s", cache_path.name)
            return tensors["features"]
    chunks = []
    for start in range(0, len(contexts), batch_size):
        batch = contexts[start : start + batch_size]
        chunks.append(enc.encode_batch(model.context_encoder, batch).values)
    features = np.concatenate(chunks, axis=0)
    if cache_path is not None:
        write_tensor_file(cache_path, {"fingerprint": fingerprint, "context_hash": ctx_hash},
                          {"features": features})
    return features


# ---------------------------------------------------------------------------
# the linear layer


@dataclass
class ProbeConfig:
    lr: float = 0.01
    epochs: int = 30
    batch_size: int = 256
    seed: object = 0  # any hashable seed chain accepted by seeding.rng
    threshold: float = 0.5


@dataclass
class ProbeHead:
    weight: ag.Tensor  # label_dim x feature_dim
    bias: ag.Tensor    # label_dim

    def predict(self, features: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        logits = features @ self.weight.values.T + self.bias.values[None, :]
        return (0.5 * (1.0 + np.tanh(0.5 * logits)) >= threshold).astype(np.float64)


@dataclass
class ProbeResult:
    kind: str
    micro_f1: float
    precision: float
    recall: float
    level: Optional[int] = None
    excluded_labels: int = 0


def micro_f1(predictions: np.ndarray, targets: np.ndarray, active=None) -> tuple:
    """Pooled micro precision/recall/F1 over the active label columns."""
    if active is not None:
        predictions = predictions[:, active]
        targets = targets[:, active]
    tp = float((predictions * targets).sum())
    fp = float((predictions * (1 - targets)).sum())
    fn = float(((1 - predictions) * targets).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return f1, precision, recall


def active_labels(train_targets: np.ndarray) -> np.ndarray:
    """Columns with at least one positive training example; the rest are excluded."""
    active = train_targets.sum(axis=0) > 0
    dropped = int((~active).sum())
    if dropped:
        log.info("excluding %d all-zero label columns from F1", dropped)
    return active


def _new_head(label_dim: int, feature_dim: int, seed) -> ProbeHead:
    gen = rng(seed, "probe-init")
    return ProbeHead(
        weight=ag.tensor(gen.uniform(-0.05, 0.05, size=(label_dim, feature_dim))),
        bias=ag.tensor(np.zeros(label_dim)),
    )


def train_probe(train_features: np.ndarray, train_task: ProbeTask,
                valid_features: np.ndarray, valid_task: ProbeTask,
                config: ProbeConfig) -> tuple:
    """Train the linear layer only; returns (head, best validation ProbeResult)."""
    if train_features.shape[0] != train_task.targets.shape[0]:
        raise ContractError("feature rows and target rows disagree")
    head = _new_head(train_task.label_dim, train_features.shape[1], config.seed)
    active = active_labels(train_task.targets)
    optimizer = Adam([head.weight, head.bias], lr=config.lr)
    best: Optional[ProbeResult] = None
    best_state = None
    for epoch in range(1, config.epochs + 1):
        order = rng(config.seed, "probe-epoch", epoch).permutation(train_features.shape[0])
        for start in range(0, len(order), config.batch_size):
            rows = order[start : start + config.batch_size]
            with ag.Tape(check_finite=False):
                x = ag.tensor(train_features[rows])
                logits = ag.add_rowvec(ag.matmul(x, ag.transpose(head.weight)), head.bias)
                losses = ag.sigmoid_binary_cross_entropy(logits, train_task.targets[rows])
                mean = ag.scale(ag.total(losses), 1.0 / len(rows))
                if not np.isfinite(float(mean.values)):
                    raise DivergenceError(f"probe diverged in epoch {epoch}")
                ag.backward(mean)
            optimizer.step()
        preds = head.predict(valid_features, config.threshold)
        f1, precision, recall = micro_f1(preds, valid_task.targets, active)
        if best is None or f1 > best.micro_f1:
            best = ProbeResult(kind=train_task.kind, micro_f1=f1, precision=precision,
                               recall=recall, excluded_labels=int((~active).sum()))
            best_state = (head.weight.values.copy(), head.bias.values.copy())
    head.weight.values[...] = best_state[0]
    head.bias.values[...] = best_state[1]
    return head, best


def evaluate_probe(head: ProbeHead, features: np.ndarray, task: ProbeTask,
                   active: np.ndarray, threshold: float = 0.5,
                   level: Optional[int] = None) -> ProbeResult:
    f1, precision, recall = micro_f1(head.predict(features, threshold), task.targets, active)
    return ProbeResult(kind=task.kind, micro_f1=f1, precision=precision, recall=recall,
                       level=level, excluded_labels=int((~active).sum()))


# ---------------------------------------------------------------------------
# sweeps and fine-tuning


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.size < 2:
        raise ContractError("spearman needs two equal-length lists of >= 2 values")

    def ranks(v):
        order = np.argsort(v, kind="stable")
        r = np.empty(v.size)
        r[order] = np.arange(1, v.size + 1, dtype=np.float64)
        for value in np.unique(v):
            mask = v == value
            if mask.sum() > 1:
                r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(xs), ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        return 0.0
    return float((rx * ry).sum() / denom)


def granularity_sweep(features_by_level: dict, tasks: dict, valid_features_by_level: dict,
                      valid_tasks: dict, test_features_by_level: dict, test_tasks: dict,
                      config: ProbeConfig) -> dict:
    """Probe every (granularity level, task) pair on frozen features.

    Returns {"results": [ProbeResult...], "spearman": {task_kind: rho}} where
    rho correlates task F1 with *fineness* (level 1 = closest negatives = the
    finest granularity, so fineness = L + 1 - level).
    """
    levels = sorted(features_by_level)
    results = []
    f1_by_task: dict = {kind: [] for kind in tasks}
    for level in levels:
        for kind, task in tasks.items():
            head, _ = train_probe(features_by_level[level], task,
                                  valid_features_by_level[level], valid_tasks[kind], config)
            active = active_labels(task.targets)
            res = evaluate_probe(head, test_features_by_level[level], test_tasks[kind],
                                 active, config.threshold, level=level)
            results.append(res)
            f1_by_task[kind].append(res.micro_f1)
    correlations = {}
    if len(levels) > 1:
        fineness = [len(levels) + 1 - lvl for lvl in levels]
        correlations = {kind: spearman(fineness, f1s) for kind, f1s in f1_by_task.items()}
    return {"results": results, "spearman": correlations}


def finetune_probe(model: DualEncoder, train_contexts, train_task: ProbeTask,
                   valid_features_fn, valid_task: ProbeTask, test_contexts,
                   test_task: ProbeTask, config: ProbeConfig,
                   encoder_epochs: int = 3, batch_size: int = 32) -> ProbeResult:
    """Probe with the context encoder unfrozen (updated jointly with the head)."""
    params = list(model.context_encoder.tensors().values())
    head = _new_head(train_task.label_dim, model.hidden, config.seed)
    optimizer = Adam(params + [head.weight, head.bias], lr=config.lr)
    active = active_labels(train_task.targets)
    best: Optional[ProbeResult] = None
    for epoch in range(1, encoder_epochs + 1):
        order = rng(config.seed, "finetune-epoch", epoch).permutation(len(train_contexts))
        for start in range(0, len(order), batch_size):
            rows = order[start : start + batch_size]
            with ag.Tape(check_finite=False):
                feats = enc.encode_batch(model.context_encoder,
                                         [train_contexts[i] for i in rows])
                logits = ag.add_rowvec(ag.matmul(feats, ag.transpose(head.weight)), head.bias)
                losses = ag.sigmoid_binary_cross_entropy(logits, train_task.targets[rows])
                mean = ag.scale(ag.total(losses), 1.0 / len(rows))
                if not np.isfinite(float(mean.values)):
                    raise DivergenceError(f"fine-tuned probe diverged in epoch {epoch}")
                ag.backward(mean)
            optimizer.step()
        valid_feats = valid_features_fn(model)
        f1, precision, recall = micro_f1(head.predict(valid_feats, config.threshold),
                                         valid_task.targets, active)
        if best is None or f1 >= best.micro_f1:
            test_feats = freeze_and_encode(model, test_contexts)
            tf1, tprec, trec = micro_f1(head.predict(test_feats, config.threshold),
                                        test_task.targets, active)
            best = ProbeResult(kind=train_task.kind, micro_f1=tf1, precision=tprec,
                               recall=trec, excluded_labels=int((~active).sum()))
    return best
