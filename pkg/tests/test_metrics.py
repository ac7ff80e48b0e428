import math

import numpy as np
import pytest

from multigran import metrics
from multigran.errors import ContractError


def test_rank_of_truth_unique_max():
    assert metrics.rank_of_truth([0.1, 0.9, 0.2], 1) == 1


def test_rank_of_truth_pessimistic_ties():
    assert metrics.rank_of_truth(np.full(10, 0.1), 6) == 10


def test_rank_of_truth_hand_count():
    assert metrics.rank_of_truth([0.5, 0.3, 0.2], 1) == 2


def test_rank_of_truth_bad_index():
    with pytest.raises(ContractError):
        metrics.rank_of_truth([0.5, 0.5], 2)


def test_mrr_all_first():
    assert metrics.mrr([1, 1, 1]) == 1.0


def test_mrr_hand_computation():
    assert abs(metrics.mrr([1, 2, 4]) - (1 + 0.5 + 0.25) / 3) < 1e-12
    assert abs(metrics.mrr([1, 2, 4]) - 0.5833333333333334) < 1e-9


def test_mrr_uniform_random_matches_analytic_expectation():
    harmonic = sum(1.0 / r for r in range(1, 21))
    expected = harmonic / 20.0
    assert abs(expected - 0.17989) < 5e-6
    gen = np.random.Generator(np.random.PCG64(123))
    ranks = gen.integers(1, 21, size=10_000)
    assert abs(metrics.mrr(ranks) - expected) < 0.005


def test_mrr_contract_and_range():
    with pytest.raises(ContractError):
        metrics.mrr([])
    gen = np.random.Generator(np.random.PCG64(4))
    ranks = gen.integers(1, 15, size=200)
    value = metrics.mrr(ranks)
    assert 0.0 < value <= 1.0


def test_mrr_permutation_invariant_and_monotone():
    gen = np.random.Generator(np.random.PCG64(8))
    ranks = list(gen.integers(1, 10, size=50))
    shuffled = list(gen.permutation(ranks))
    assert metrics.mrr(ranks) == metrics.mrr(shuffled)
    improved = list(ranks)
    worst = max(range(len(ranks)), key=lambda i: ranks[i])
    improved[worst] = max(1, ranks[worst] - 1)
    if improved[worst] < ranks[worst]:
        assert metrics.mrr(improved) > metrics.mrr(ranks)


def test_hits_at_1_is_mean_of_rank_one():
    ranks = [1, 3, 1, 2, 1]
    assert metrics.hits_at_1(ranks) == np.mean([r == 1 for r in ranks])


def test_r_n_at_k_truth_always_highest():
    rows = [np.array([0.1, 0.9, 0.05]), np.array([0.7, 0.1, 0.2])]
    truths = [1, 0]
    assert metrics.r_n_at_k(rows, truths, 2, 1) == 1.0


def test_r_n_at_k_random_scores_match_coin_flip():
    gen = np.random.Generator(np.random.PCG64(77))
    rows = gen.normal(size=(10_000, 10))
    truths = gen.integers(0, 10, size=10_000)
    value = metrics.r_n_at_k(list(rows), list(truths), 2, 1)
    assert abs(value - 0.5) < 0.02


def test_r_10_at_1_equals_hits_at_1_on_ten_candidates():
    gen = np.random.Generator(np.random.PCG64(5))
    rows = list(gen.normal(size=(500, 10)))
    truths = list(gen.integers(0, 10, size=500))
    ranks = [metrics.rank_of_truth(r, t) for r, t in zip(rows, truths)]
    assert metrics.r_n_at_k(rows, truths, 10, 1) == metrics.hits_at_1(ranks)


def test_r_n_at_k_contract_errors():
    rows = [np.zeros(5)]
    with pytest.raises(ContractError):
        metrics.r_n_at_k(rows, [0], 6, 1)
    with pytest.raises(ContractError):
        metrics.r_n_at_k(rows, [0], 3, 4)


def test_paired_significance_identical_lists():
    ranks = [1, 2, 3, 4] * 25
    assert metrics.paired_significance(ranks, ranks, iterations=500, seed=0) == 1.0


def test_paired_significance_maximal_separation():
    a = [1] * 1000
    b = [10] * 1000
    p = metrics.paired_significance(a, b, iterations=10_000, seed=0)
    assert p < 0.001


def test_paired_significance_reproducible_and_validated():
    gen = np.random.Generator(np.random.PCG64(9))
    a = list(gen.integers(1, 10, size=300))
    b = list(gen.integers(1, 10, size=300))
    p1 = metrics.paired_significance(a, b, iterations=2000, seed=42)
    p2 = metrics.paired_significance(a, b, iterations=2000, seed=42)
    assert p1 == p2
    with pytest.raises(ContractError):
        metrics.paired_significance([1, 2], [1, 2, 3])


def test_evaluate_scores_builds_consistent_report():
    gen = np.random.Generator(np.random.PCG64(11))
    rows = list(gen.normal(size=(40, 10)))
    truths = list(gen.integers(0, 10, size=40))
    report = metrics.evaluate_scores(rows, truths, rn_pairs=[(10, 1), (2, 1)], label="x")
    assert report.example_count == 40
    assert len(report.ranks) == 40
    assert all(1 <= r <= 10 for r in report.ranks)
    assert 0.0 < report.mrr <= 1.0
    assert report.r_n_at_k[(10, 1)] == report.hits_at_1
    payload = report.to_json_dict()
    assert payload["label"] == "x"
    assert payload["r_n_at_k"]["10@1"] == report.hits_at_1
