"""Tournament partitioning, elimination rounds and the survival law"""

import logging

import pytest

from cache_engine import ResponseCache
from corpus_engine import sample_tournament_queries
from llm_backend import LLMClient
from prompt_engine import TaskKind, load_templates
from style_oracle import MockBackend, StyleOracle
from synthetic_corpus import generate_corpus
from tournament_engine import (
    TournamentBudgetError,
    TournamentConfig,
    TournamentResult,
    partition,
    run_subset,
    run_tournament,
    simulate_round_accuracy,
    subset_query_count,
    survival_round,
    survivor_chain,
)

TEMPLATE = load_templates().get(TaskKind.TOURNAMENT, "P1")


def mock_client(**oracle_args):
    backend = MockBackend(StyleOracle(**oracle_args))
    return LLMClient(backend, cache=ResponseCache()), backend


@pytest.fixture(scope="module")
def tournament_set():
    return sample_tournament_queries(generate_corpus(60, 4), shots=1, n_queries=50, seed=0)


# -----------------------------------------------------------
# PARTITIONING
# -----------------------------------------------------------
@pytest.mark.parametrize("n, chain", [(500, [500, 42, 4, 1]), (686, [686, 58, 5, 1]), (50, [50, 5, 1]), (1, [1])])
def test_survivor_chains(n, chain):
    assert survivor_chain(n, 12) == chain


def test_partition_balance_exhaustive():
    for s in range(2, 17):
        for n in range(1, 1001):
            sizes = [len(p) for p in partition(list(range(n)), s)]
            assert len(sizes) == -(-n // s)
            assert sum(sizes) == n
            assert max(sizes) <= s
            assert max(sizes) - min(sizes) <= 1


def test_partition_is_contiguous_and_ordered():
    pool = [f"a{i}" for i in range(25)]
    subsets = partition(pool, 12)
    assert [len(p) for p in subsets] == [9, 8, 8]
    assert [a for p in subsets for a in p] == pool


def test_partition_rejects_bad_input():
    with pytest.raises(ValueError):
        partition([], 12)
    with pytest.raises(ValueError):
        partition(["a", "b"], 1)
    with pytest.raises(ValueError):
        TournamentConfig(subset_size=1)


def test_subset_query_count():
    assert subset_query_count(500, 12) == 42 + 4 + 1
    assert subset_query_count(1, 12) == 0
    # 13 -> [7, 6] -> 2 subsets, then 2 -> 1
    assert subset_query_count(13, 12) == 3


# -----------------------------------------------------------
# SUBSETS
# -----------------------------------------------------------
def test_singleton_subset_is_a_bye(tournament_set):
    client, backend = mock_client()
    query = tournament_set.queries[0]
    entry = run_subset(query, ["author001"], tournament_set.references, TournamentConfig(), client, TEMPLATE)
    assert entry.winner == "author001"
    assert entry.query_key is None
    assert backend.calls == 0


def test_unsure_oracle_forces_first_member(tournament_set, caplog):
    client, backend = mock_client(unsure_rate=1.0)
    query = tournament_set.queries[0]
    subset = sorted(tournament_set.references)[:5]
    with caplog.at_level(logging.WARNING):
        entry = run_subset(query, subset, tournament_set.references, TournamentConfig(), client, TEMPLATE)
    assert entry.forced
    assert entry.winner == subset[0]
    assert entry.query_key and entry.retry_key and entry.query_key != entry.retry_key
    assert backend.calls == 2
    assert "Forced win" in caplog.text


def test_over_budget_subset_raises(tournament_set):
    client, backend = mock_client()
    cfg = TournamentConfig(token_limit=300, reserved_output_tokens=256)
    subset = sorted(tournament_set.references)[:4]
    with pytest.raises(TournamentBudgetError):
        run_subset(tournament_set.queries[0], subset, tournament_set.references, cfg, client, TEMPLATE)
    assert backend.calls == 0


def test_missing_references_rejected(tournament_set):
    client, _ = mock_client()
    cfg = TournamentConfig(shots_per_author=2)
    with pytest.raises(ValueError):
        run_subset(tournament_set.queries[0], ["author001", "author002"], tournament_set.references, cfg, client, TEMPLATE)


# -----------------------------------------------------------
# FULL TOURNAMENTS
# -----------------------------------------------------------
def test_perfect_oracle_always_finds_author(tournament_set):
    client, _ = mock_client()
    pool = sorted(tournament_set.references)
    for query in tournament_set.queries:
        result = run_tournament(query, pool, tournament_set.references, TournamentConfig(), client, TEMPLATE)
        assert result.winner == query.author
        assert [len(r) for r in result.rounds] == survivor_chain(60, 12)
        assert survival_round(result) == len(result.rounds) - 1
        assert result.forced_wins == 0


def test_query_count_law(tournament_set):
    client, backend = mock_client()
    pool = sorted(tournament_set.references)[:50]
    queries = [q for q in tournament_set.queries if q.author in pool][:3]
    for query in queries:
        result = run_tournament(query, pool, tournament_set.references, TournamentConfig(), client, TEMPLATE)
        assert result.query_count == subset_query_count(50, 12) == 5 + 1
        assert len(result.query_keys) == result.query_count
    assert backend.calls == 6 * len(queries)


def test_rounds_shrink_and_nest(tournament_set):
    client, _ = mock_client(epsilon=0.5, seed=4)
    pool = sorted(tournament_set.references)
    query = tournament_set.queries[3]
    result = run_tournament(query, pool, tournament_set.references, TournamentConfig(seed=2), client, TEMPLATE)
    assert sorted(result.rounds[0]) == pool
    for earlier, later in zip(result.rounds, result.rounds[1:]):
        assert len(later) < len(earlier)
        assert set(later) <= set(earlier)
    assert result.rounds[-1] == [result.winner]


def test_serial_and_threaded_runs_match(tournament_set):
    pool = sorted(tournament_set.references)
    query = tournament_set.queries[5]
    serial = run_tournament(
        query, pool, tournament_set.references, TournamentConfig(max_in_flight=1),
        mock_client(epsilon=0.3, seed=1)[0], TEMPLATE,
    )
    threaded = run_tournament(
        query, pool, tournament_set.references, TournamentConfig(max_in_flight=8),
        mock_client(epsilon=0.3, seed=1)[0], TEMPLATE,
    )
    assert serial.to_dict() == threaded.to_dict()


def test_result_dict_round_trip(tournament_set):
    client, _ = mock_client()
    pool = sorted(tournament_set.references)[:13]
    query = next(q for q in tournament_set.queries if q.author in pool)
    result = run_tournament(query, pool, tournament_set.references, TournamentConfig(), client, TEMPLATE)
    assert TournamentResult.from_dict(result.to_dict()) == result


def test_single_author_pool(tournament_set):
    client, backend = mock_client()
    query = tournament_set.queries[0]
    result = run_tournament(query, [query.author], tournament_set.references, TournamentConfig(), client, TEMPLATE)
    assert result.winner == query.author
    assert result.rounds == [[query.author]]
    assert backend.calls == 0


def test_survival_round_unknown_author():
    result = TournamentResult("q", "x", [["a", "b"], ["a"]], "a")
    with pytest.raises(ValueError):
        survival_round(result)


# -----------------------------------------------------------
# SURVIVAL LAW
# -----------------------------------------------------------
def test_simulator_matches_geometric_law():
    fractions = simulate_round_accuracy(500, 12, 0.9, trials=20_000, seed=0)
    assert fractions[0] == 1.0
    for r, value in enumerate(fractions):
        assert value == pytest.approx(0.9 ** r, abs=0.015)


def test_simulator_extremes():
    assert simulate_round_accuracy(500, 12, 1.0, trials=100) == [1.0, 1.0, 1.0, 1.0]
    assert simulate_round_accuracy(500, 12, 0.0, trials=100) == [1.0, 0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        simulate_round_accuracy(500, 12, 1.5, trials=10)


def test_noisy_oracle_tracks_simulator():
    """ε = 0.1 mock over a 500-author pool lands near p ** 3 in the final round"""
    corpus = generate_corpus(500, 2)
    tset = sample_tournament_queries(corpus, shots=1, n_queries=500, seed=7)
    client, _ = mock_client(epsilon=0.1, seed=3)
    pool = sorted(tset.references)
    cfg = TournamentConfig(seed=7)

    results = [run_tournament(q, pool, tset.references, cfg, client, TEMPLATE) for q in tset.queries]
    observed = []
    for r in range(4):
        observed.append(sum(survival_round(res) >= r for res in results) / len(results))

    predicted = simulate_round_accuracy(500, 12, 0.9, trials=20_000, seed=1)
    assert observed[0] == 1.0
    assert observed == sorted(observed, reverse=True)
    assert abs(observed[-1] - predicted[-1]) <= 0.05
    assert abs(observed[-1] - 0.729) <= 0.05
    assert all(res.forced_wins == 0 for res in results)
