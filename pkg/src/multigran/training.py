"""Adam training loop with global-norm gradient clipping and per-epoch checkpoints.

After every epoch the model is checkpointed and validation MRR is computed;
the checkpoint with the highest validation MRR wins. A non-finite batch loss
aborts training with a diagnostic naming the epoch and batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autograd as ag
from . import metrics
from .errors import ContractError, DivergenceError
from .model import DualEncoder, batch_loss, candidate_logits, save_checkpoint
from .seeding import rng

log = logging.getLogger(__name__)


class Adam:
    """Adam with bias correction; one slot pair per parameter tensor."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> None:
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.values) for p in self.params]
        self._v = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.gradient()
            self._m[i] = b1 * self._m[i] + (1 - b1) * g
            self._v[i] = b2 * self._v[i] + (1 - b2) * g * g
            m_hat = self._m[i] / (1 - b1 ** self.step_count)
            v_hat = self._v[i] / (1 - b2 ** self.step_count)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm; returns the raw norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    valid_mrr: float
    checkpoint: Optional[str]


@dataclass
class TrainResult:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.best_epoch - 1]

    def top_checkpoints(self, count: int) -> list:
        """Checkpoint paths of the best `count` epochs by validation MRR."""
        ranked = sorted(self.epochs, key=lambda r: (-r.valid_mrr, r.epoch))
        return [r.checkpoint for r in ranked[:count]]


def validation_mrr(model: DualEncoder, valid_examples, batch_size: int = 64) -> float:
    """MRR over (context_ids, candidate_id_lists, truth_position) triples."""
    ranks = []
    for start in range(0, len(valid_examples), batch_size):
        chunk = valid_examples[start : start + batch_size]
        logits = candidate_logits(model, [c for c, _, _ in chunk], [cs for _, cs, _ in chunk])
        for row, (_, _, truth) in zip(logits, chunk):
            ranks.append(metrics.rank_of_truth(row, truth))
    return metrics.mrr(ranks)


def train(model: DualEncoder, examples, pool_responses, valid_examples, *,
          epochs: int, lr: float, batch_size: int, clip_norm: float, seed,
          checkpoint_dir=None, resampler: Optional[Callable] = None) -> TrainResult:
    """Train a dual encoder on bucketed or baseline examples.

    `examples` are TrainingExamples whose negative indices point into
    `pool_responses`; `resampler(epoch)` may supply fresh examples per epoch.
    Every example must carry exactly k-1 negatives for a shared k.
    """
    if not examples:
        raise ContractError("cannot train on an empty corpus")
    k = len(examples[0].negative_indices) + 1
    for ex in examples:
        if len(ex.negative_indices) != k - 1:
            raise ContractError("all training examples must carry exactly k-1 negatives")

    params = model.parameters()
    optimizer = Adam(params, lr=lr)
    result = TrainResult()
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    tag = model.granularity_level if model.granularity_level is not None else "baseline"
    for epoch in range(1, epochs + 1):
        if resampler is not None and epoch > 1:
            examples = resampler(epoch - 1)
        order = rng(seed, "epoch-order", epoch).permutation(len(examples))
        losses = []
        for batch_no, start in enumerate(range(0, len(order), batch_size)):
            batch = [examples[i] for i in order[start : start + batch_size]]
            contexts = [ex.context_ids for ex in batch]
            cands = [[pool_responses[ex.gt_index]]
                     + [pool_responses[j] for j in ex.negative_indices] for ex in batch]
            truths = np.zeros(len(batch), dtype=np.intp)
            with ag.Tape(check_finite=False):
                mean = batch_loss(model, contexts, cands, truths)
                value = float(mean.values)
                if not np.isfinite(value):
                    raise DivergenceError(
                        f"non-finite loss in epoch {epoch}, batch {batch_no} (model {tag})"
                    )
                ag.backward(mean)
            clip_global_norm(params, clip_norm)
            optimizer.step()
            losses.append(value)
        for p in params:
            if not np.isfinite(p.values).all():
                raise DivergenceError(f"non-finite parameters after epoch {epoch} (model {tag})")
        mrr = validation_mrr(model, valid_examples)
        path = None
        if checkpoint_dir is not None:
            path = str(checkpoint_dir / f"epoch_{epoch:03d}.ckpt")
            save_checkpoint(model, path)
        record = EpochRecord(epoch=epoch, mean_loss=float(np.mean(losses)),
                             valid_mrr=mrr, checkpoint=path)
        result.epochs.append(record)
        if result.best_epoch < 0 or mrr > result.best.valid_mrr:
            result.best_epoch = epoch
        log.info("model %s epoch %d: loss %.4f, valid MRR %.4f", tag, epoch,
                 record.mean_loss, mrr)
    return result
