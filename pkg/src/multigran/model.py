"""Dual-encoder scorer: inner-product logits over a candidate set, softmax loss.

Candidate scores are unnormalised inner products between the context vector
and each response vector; training minimises softmax cross-entropy over the
candidate set with the ground truth as target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from . import encoder as enc
from .errors import ContractError, ParseError
from .store import file_sha256, read_tensor_file, write_tensor_file

CHECKPOINT_KIND = "multigran-dual-encoder"


@dataclass
class DualEncoder:
    context_encoder: enc.EncoderParams
    response_encoder: enc.EncoderParams
    vocab_hash: str
    granularity_level: Optional[int] = None  # bucket index, 1 = closest negatives

    @property
    def hidden(self) -> int:
        return self.context_encoder.hidden

    def tensors(self) -> dict:
        out = {}
        for prefix, params in (("ctx", self.context_encoder), ("rsp", self.response_encoder)):
            for name, t in params.tensors().items():
                out[f"{prefix}.{name}"] = t
        return out

    def parameters(self) -> list:
        return [self.tensors()[name] for name in sorted(self.tensors())]


def init_model(vocab_size: int, emb_dim: int, hidden: int, seed, vocab_hash: str,
               granularity_level: Optional[int] = None) -> DualEncoder:
    """Two independently initialised encoders; no parameter sharing."""
    return DualEncoder(
        context_encoder=enc.init_params(vocab_size, emb_dim, hidden, (seed, "context")),
        response_encoder=enc.init_params(vocab_size, emb_dim, hidden, (seed, "response")),
        vocab_hash=vocab_hash,
        granularity_level=granularity_level,
    )


@dataclass
class ScoredCandidates:
    logits: ag.Tensor  # shape (k,)
    ground_truth_position: int


def score(model: DualEncoder, context, candidates) -> ScoredCandidates:
    """Inner-product logits for one context against k candidate responses."""
    candidates = [list(c) for c in candidates]
    if len(candidates) < 2:
        raise ContractError("scoring needs at least two candidates")
    for cand in candidates:
        if not cand:
            raise ContractError("candidate empty after tokenization")
    ctx = enc.encode(model.context_encoder, context)
    dots = [ag.matmul(ctx, enc.encode(model.response_encoder, cand)) for cand in candidates]
    return ScoredCandidates(logits=ag.stack(dots), ground_truth_position=0)


def loss(scored: ScoredCandidates) -> ag.Tensor:
    return ag.softmax_cross_entropy(scored.logits, scored.ground_truth_position)


def batch_loss(model: DualEncoder, contexts, candidate_lists, truth_positions) -> ag.Tensor:
    """Mean softmax cross-entropy over a batch.

    `candidate_lists` holds k candidates per context; all lists share one k.
    Output-equivalent to averaging per-example `loss(score(...))`.
    """
    k = len(candidate_lists[0])
    flat = [cand for cands in candidate_lists for cand in cands]
    ctx_vecs = enc.encode_batch(model.context_encoder, contexts)
    rsp_vecs = enc.encode_batch(model.response_encoder, flat)
    logits = ag.block_logits(ctx_vecs, rsp_vecs, k)
    losses = ag.softmax_cross_entropy_rows(logits, truth_positions)
    return ag.scale(ag.total(losses), 1.0 / len(contexts))


def candidate_logits(model: DualEncoder, contexts, candidate_lists) -> np.ndarray:
    """Inference-path logits, shape (n, k); call outside any tape."""
    k = len(candidate_lists[0])
    flat = [cand for cands in candidate_lists for cand in cands]
    ctx_vecs = enc.encode_batch(model.context_encoder, contexts).values
    rsp_vecs = enc.encode_batch(model.response_encoder, flat).values
    return np.einsum("bh,bkh->bk", ctx_vecs, rsp_vecs.reshape(len(contexts), k, -1))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: DualEncoder, path) -> str:
    """Write the documented tensorfile checkpoint; returns its sha256."""
    meta = {
        "kind": CHECKPOINT_KIND,
        "version": 1,
        "vocab_hash": model.vocab_hash,
        "vocab_size": model.context_encoder.vocab_size,
        "emb_dim": model.context_encoder.emb_dim,
        "hidden": model.hidden,
        "granularity_level": model.granularity_level,
    }
    write_tensor_file(path, meta, {k: t.values for k, t in model.tensors().items()})
    return file_sha256(path)


def load_checkpoint(path) -> DualEncoder:
    meta, tensors = read_tensor_file(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ParseError(f"{path}: not a dual-encoder checkpoint")

    def params(prefix):
        return enc.EncoderParams(
            embedding=ag.tensor(tensors[f"{prefix}.embedding"]),
            w_input=ag.tensor(tensors[f"{prefix}.w_input"]),
            w_hidden=ag.tensor(tensors[f"{prefix}.w_hidden"]),
            bias=ag.tensor(tensors[f"{prefix}.bias"]),
        )

    return DualEncoder(
        context_encoder=params("ctx"),
        response_encoder=params("rsp"),
        vocab_hash=meta["vocab_hash"],
        granularity_level=meta.get("granularity_level"),
    )


def checkpoint_fingerprint(path) -> str:
    return file_sha256(path)
