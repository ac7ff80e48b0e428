"""Retrieval evaluation: MRR, Hits@1, R_N@k, paired bootstrap significance.

Rank ties are broken pessimistically (tied candidates count as ranked ahead
of the ground truth) so every reported number is a lower bound; a constant
scorer cannot inflate the metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .seeding import rng


def rank_of_truth(probabilities, truth_index: int) -> int:
    """1 + number of other candidates scoring >= the truth (pessimistic ties)."""
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= truth_index < p.size:
        raise ContractError(f"truth index {truth_index} outside [0, {p.size})")
    ahead = int(np.count_nonzero(p >= p[truth_index])) - 1
    return 1 + ahead


def mrr(ranks) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ContractError("MRR of an empty rank list")
    # canonical summation order: exactly invariant to example permutation
    return float(np.sort(1.0 / ranks).sum() / ranks.size)


def hits_at_1(ranks) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ContractError("Hits@1 of an empty rank list")
    return float((ranks == 1).mean())


def r_n_at_k(score_rows, truth_positions, n: int, k: int) -> float:
    """Fraction of examples whose truth ranks <= k within an N-candidate subset.

    The subset is the ground truth plus the first N-1 other candidates in
    stored order, so the metric is deterministic given the stored candidate
    lists. With N equal to the full candidate count, R_N@1 equals Hits@1.
    """
    if k > n:
        raise ContractError(f"k={k} exceeds candidate subset size N={n}")
    hits = 0
    count = 0
    for row, truth in zip(score_rows, truth_positions):
        row = np.asarray(row, dtype=np.float64)
        if n > row.size:
            raise ContractError(f"N={n} exceeds available candidates ({row.size})")
        others = [i for i in range(row.size) if i != truth][: n - 1]
        subset = np.concatenate(([row[truth]], row[others]))
        rank = 1 + int(np.count_nonzero(subset >= subset[0])) - 1
        hits += rank <= k
        count += 1
    if count == 0:
        raise ContractError("R_N@k of an empty example list")
    return hits / count


@dataclass
class EvalReport:
    mrr: float
    hits_at_1: float
    r_n_at_k: dict  # {(N, k): fraction}
    ranks: list[int]
    example_count: int
    label: str = ""

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "example_count": self.example_count,
            "mrr": self.mrr,
            "hits_at_1": self.hits_at_1,
            "r_n_at_k": {f"{n}@{k}": v for (n, k), v in sorted(self.r_n_at_k.items())},
            "ranks": list(map(int, self.ranks)),
        }


def evaluate_scores(score_rows, truth_positions, rn_pairs=(), label="") -> EvalReport:
    """Full report from per-example candidate scores in stored order."""
    ranks = [rank_of_truth(row, t) for row, t in zip(score_rows, truth_positions)]
    report = EvalReport(
        mrr=mrr(ranks),
        hits_at_1=hits_at_1(ranks),
        r_n_at_k={(n, k): r_n_at_k(score_rows, truth_positions, n, k) for n, k in rn_pairs},
        ranks=ranks,
        example_count=len(ranks),
        label=label,
    )
    return report


def paired_significance(ranks_a, ranks_b, iterations: int = 10_000, seed=0) -> float:
    """Two-sided paired-bootstrap p-value on the MRR difference."""
    ra = np.asarray(ranks_a, dtype=np.float64)
    rb = np.asarray(ranks_b, dtype=np.float64)
    if ra.shape != rb.shape or ra.ndim != 1:
        raise ContractError("paired significance needs equal-length rank lists")
    if ra.size == 0:
        raise ContractError("paired significance of empty rank lists")
    diffs = 1.0 / ra - 1.0 / rb
    gen = rng(seed, "paired-bootstrap", iterations)
    n = diffs.size
    at_or_below = 0
    at_or_above = 0
    for _ in range(iterations):
        sample = diffs[gen.integers(0, n, size=n)].mean()
        at_or_below += sample <= 0.0
        at_or_above += sample >= 0.0
    p = 2.0 * (min(at_or_below, at_or_above) + 1) / (iterations + 1)
    return min(1.0, p)
