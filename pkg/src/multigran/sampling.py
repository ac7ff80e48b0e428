"""Semantic-distance bucketing of the response pool and negative sampling.

For every anchor response, the rest of the pool is ranked by descending
cosine similarity (computed from frozen response-encoder embeddings) and
split into L balanced contiguous rank segments: segment 1 holds the closest
responses, segment L the most distant. Level-l training corpora draw their
negatives uniformly from segment l; the baseline corpus draws uniformly from
the whole pool and needs no embeddings at all. The full pairwise similarity
matrix is never materialised; each anchor's row is computed on the fly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as dio
from . import encoder as enc
from .errors import ConfigurationError, DomainError, IntegrityError, ParseError, SamplingError
from .seeding import rng

log = logging.getLogger(__name__)

POOL_KIND = "multigran-response-pool"
ZERO_ROW_EPSILON = 1e-8


@dataclass
class ResponsePool:
    """The sampling population R: token sequences plus frozen embeddings."""

    responses: list             # token-id sequences, index-aligned with embeddings
    embeddings: np.ndarray      # len(responses) x hidden
    encoder_fingerprint: str

    def __post_init__(self):
        if self.embeddings.shape[0] != len(self.responses):
            raise ConfigurationError("pool embeddings and responses disagree in length")
        norms = np.linalg.norm(self.embeddings, axis=1)
        zero = norms == 0.0
        if zero.any():
            # cosine is undefined on zero rows; nudge them deterministically
            log.warning("pool has %d zero embedding rows; applying epsilon fix", zero.sum())
            fix = np.zeros_like(self.embeddings)
            fix[zero, 0] = ZERO_ROW_EPSILON
            self.embeddings = self.embeddings + fix
            norms = np.linalg.norm(self.embeddings, axis=1)
        self._unit = self.embeddings / norms[:, None]

    def __len__(self) -> int:
        return len(self.responses)

    def similarities_to(self, anchor: int) -> np.ndarray:
        """One row of the conceptual similarity matrix D."""
        return self._unit @ self._unit[anchor]


def build_pool(responses, response_encoder: enc.EncoderParams, encoder_fingerprint: str,
               batch_size: int = 256) -> ResponsePool:
    """Embed every pool response with the frozen response encoder."""
    chunks = []
    for start in range(0, len(responses), batch_size):
        batch = responses[start : start + batch_size]
        chunks.append(enc.encode_batch(response_encoder, batch).values)
    return ResponsePool(
        responses=[list(r) for r in responses],
        embeddings=np.concatenate(chunks, axis=0),
        encoder_fingerprint=encoder_fingerprint,
    )


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


@dataclass
class BucketIndex:
    """Balanced rank partition of the pool around one anchor.

    `order` lists every other response index sorted by descending similarity
    to the anchor (ties broken by ascending response index); `boundaries` has
    L+1 cut points so segment l (1-based) is order[boundaries[l-1]:boundaries[l]].
    """

    anchor: int
    order: np.ndarray
    boundaries: np.ndarray

    @property
    def levels(self) -> int:
        return len(self.boundaries) - 1

    def segment(self, level: int) -> np.ndarray:
        if not 1 <= level <= self.levels:
            raise ConfigurationError(f"level {level} outside [1, {self.levels}]")
        return self.order[self.boundaries[level - 1] : self.boundaries[level]]


def build_bucket_index(pool: ResponsePool, anchor: int, levels: int) -> BucketIndex:
    n = len(pool)
    if levels < 1:
        raise ConfigurationError("need at least one granularity level")
    if n <= levels:
        raise ConfigurationError(f"pool of {n} cannot be split into {levels} segments per anchor")
    sims = pool.similarities_to(anchor)
    others = np.concatenate((np.arange(anchor), np.arange(anchor + 1, n)))
    # stable sort on descending similarity keeps ties in ascending index order
    order = others[np.argsort(-sims[others], kind="stable")]
    count = n - 1
    boundaries = np.array([(count * l) // levels for l in range(levels + 1)], dtype=np.intp)
    return BucketIndex(anchor=anchor, order=order, boundaries=boundaries)


def sample_negatives(k: int, gen: np.random.Generator, *,
                     index: Optional[BucketIndex] = None, level: Optional[int] = None,
                     pool_size: Optional[int] = None, exclusions=frozenset()) -> list:
    """Draw k-1 negative indices uniformly without replacement.

    With a BucketIndex and level, draws from that segment; otherwise draws
    from the whole pool (uniform baseline), which requires `pool_size`. The
    anchor and all excluded indices are never returned. If fewer than k-1
    candidates are eligible, the whole set is taken and the remainder is
    filled with replacement (logged).
    """
    if k < 2:
        raise SamplingError("candidate sets need k >= 2")
    excluded = set(exclusions)
    if index is not None:
        if level is None:
            raise ConfigurationError("a bucketed draw needs a level")
        excluded.add(index.anchor)
        eligible = [int(i) for i in index.segment(level) if i not in excluded]
        anchor = index.anchor
    else:
        if pool_size is None:
            raise ConfigurationError("a uniform draw needs the pool size")
        eligible = [i for i in range(pool_size) if i not in excluded]
        anchor = min(exclusions) if exclusions else None
    if not eligible:
        raise SamplingError(f"no eligible negatives for anchor {anchor}")
    need = k - 1
    if len(eligible) >= need:
        picked = gen.choice(len(eligible), size=need, replace=False)
        return [eligible[i] for i in picked]
    log.warning("anchor %s: only %d eligible negatives for k-1=%d; filling with replacement",
                anchor, len(eligible), need)
    fill = gen.choice(len(eligible), size=need - len(eligible), replace=True)
    return list(eligible) + [eligible[i] for i in fill]


# ---------------------------------------------------------------------------
# corpus construction


def duplicate_groups(responses) -> list:
    """index -> set of indices holding the exact same token sequence."""
    by_text: dict = {}
    for i, toks in enumerate(responses):
        by_text.setdefault(tuple(toks), set()).add(i)
    return [by_text[tuple(toks)] for toks in responses]


class NegativeSampler:
    """Draws level or baseline corpora for a fixed training split.

    Negatives come from a per-anchor generator seeded with
    (seed, stream-tag, anchor, epoch-tag), so corpora are reproducible and
    per-epoch resampling just changes the epoch tag. Exact text duplicates of
    an anchor's ground truth are never sampled as its negatives.
    """

    def __init__(self, train_split, vocab, k: int, seed, truncation: int,
                 pool: Optional[ResponsePool] = None, levels: int = 0,
                 cache_buckets: bool = False) -> None:
        self.k = k
        self.seed = seed
        self.levels = levels
        self.pool = pool
        self.responses = (
            pool.responses if pool is not None
            else [vocab.encode_text(ex.response) for ex in train_split]
        )
        self.contexts = [dio.context_token_ids(ex, vocab, truncation) for ex in train_split]
        self.duplicates = duplicate_groups(self.responses)
        self._cache_buckets = cache_buckets
        self._buckets: dict = {}
        if pool is not None and len(train_split) != len(pool):
            raise ConfigurationError("pool must hold every training-set response")

    def _bucket(self, anchor: int) -> BucketIndex:
        if self.pool is None:
            raise ConfigurationError("bucketed sampling needs a response pool")
        cached = self._buckets.get(anchor)
        if cached is None:
            cached = build_bucket_index(self.pool, anchor, self.levels)
            if self._cache_buckets:
                self._buckets[anchor] = cached
        return cached

    def corpus(self, level: Optional[int], epoch_tag: int = -1) -> list:
        """TrainingExamples for one granularity level (None = uniform baseline)."""
        examples = []
        stream = "negatives-baseline" if level is None else "negatives"
        for i in range(len(self.responses)):
            gen = rng(self.seed, stream, i, epoch_tag,
                      0 if level is None else level)
            exclusions = self.duplicates[i]
            if level is None:
                negs = sample_negatives(self.k, gen, pool_size=len(self.responses),
                                        exclusions=exclusions | {i})
            else:
                negs = sample_negatives(self.k, gen, index=self._bucket(i), level=level,
                                        exclusions=exclusions)
            examples.append(dio.TrainingExample(self.contexts[i], i, negs, level))
        return examples


def build_corpora(train_split, vocab, pool: ResponsePool, encoder_fingerprint: str,
                  levels: int, k: int, seed, truncation: int, out_dir=None) -> dict:
    """Emit the L bucketed corpora plus the uniform baseline corpus.

    Returns {level_or_None: [TrainingExample]}; with `out_dir`, each corpus is
    also persisted as level_<l>.jsonl / baseline.jsonl.
    """
    if pool.encoder_fingerprint != encoder_fingerprint:
        raise IntegrityError(
            f"pool was built with encoder {pool.encoder_fingerprint[:12]}..., "
            f"expected {encoder_fingerprint[:12]}..."
        )
    sampler = NegativeSampler(train_split, vocab, k, seed, truncation,
                              pool=pool, levels=levels)
    corpora = {lvl: sampler.corpus(lvl) for lvl in range(1, levels + 1)}
    corpora[None] = sampler.corpus(None)
    if out_dir is not None:
        out_dir = Path(out_dir)
        for lvl, examples in corpora.items():
            name = "baseline.jsonl" if lvl is None else f"level_{lvl}.jsonl"
            dio.write_train_corpus(out_dir / name, examples, level=lvl, k=k,
                                   pool_fingerprint=pool.encoder_fingerprint)
    return corpora


def mean_truth_negative_similarity(pool: ResponsePool, examples) -> float:
    """Average cosine(ground truth, negative) over a corpus, recomputed post hoc."""
    total = 0.0
    count = 0
    for ex in examples:
        sims = pool.similarities_to(ex.gt_index)
        total += float(sims[ex.negative_indices].sum())
        count += len(ex.negative_indices)
    return total / count


# ---------------------------------------------------------------------------
# pool files


def write_pool(pool: ResponsePool, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": POOL_KIND, "version": 1, "count": len(pool),
        "hidden": int(pool.embeddings.shape[1]),
        "fingerprint": pool.encoder_fingerprint,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for toks, emb in zip(pool.responses, pool.embeddings):
            fh.write(json.dumps({"tokens": toks, "embedding": emb.tolist()}) + "\n")


def load_pool(path) -> ResponsePool:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except ValueError as err:
            raise ParseError(f"{path}: bad pool header ({err})", line=1)
        if header.get("kind") != POOL_KIND:
            raise ParseError(f"{path}: not a response pool file", line=1)
        responses = []
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                responses.append([int(t) for t in rec["tokens"]])
                rows.append(rec["embedding"])
            except (KeyError, TypeError, ValueError) as err:
                raise ParseError(f"{path}: malformed pool record ({err})", line=lineno)
    if len(responses) != header["count"]:
        raise ParseError(f"{path}: header count {header['count']} != {len(responses)}")
    return ResponsePool(
        responses=responses,
        embeddings=np.asarray(rows, dtype=np.float64),
        encoder_fingerprint=header["fingerprint"],
    )
