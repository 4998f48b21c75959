"""
Tournament Engine - elimination attribution over large author pools

The pool is shuffled once per query (seeded), split into balanced
subsets of at most subset_size authors, and every subset with two or more
authors gets one attribution query. Winners keep their relative order and
play the next round until one author is left.
"""

import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List, Mapping, Optional, Sequence

from corpus_engine import CodeSample
from llm_backend import LLMClient, cache_key
from prompt_engine import (
    DEFAULT_BYTES_PER_TOKEN,
    FORMAT_REMINDER,
    RESERVED_OUTPUT_TOKENS,
    PromptTemplate,
    RenderedPrompt,
    check_budget,
    estimate_tokens,
    render_tournament,
)
from verdict_parser import AttributionKind, parse_attribution

logger = logging.getLogger(__name__)


class TournamentBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class TournamentConfig:
    subset_size: int = 12
    shots_per_author: int = 1
    template: str = "P1"
    seed: int = 0
    token_limit: int = 16000
    reserved_output_tokens: int = RESERVED_OUTPUT_TOKENS
    max_in_flight: int = 4
    bytes_per_token: float = DEFAULT_BYTES_PER_TOKEN

    def __post_init__(self):
        if self.subset_size < 2:
            raise ValueError(f"❌ subset_size must be >= 2, got {self.subset_size}")
        if self.shots_per_author < 1:
            raise ValueError(f"❌ shots_per_author must be >= 1, got {self.shots_per_author}")


@dataclass(frozen=True)
class SubsetLogEntry:
    round: int
    members: List[str]
    winner: str
    query_key: Optional[str] = None  # None for a bye
    retry_key: Optional[str] = None
    forced: bool = False


@dataclass
class TournamentResult:
    query_id: str
    true_author: str
    rounds: List[List[str]]
    winner: str
    per_subset_log: List[SubsetLogEntry] = field(default_factory=list)

    @property
    def forced_wins(self) -> int:
        return sum(1 for e in self.per_subset_log if e.forced)

    @property
    def query_count(self) -> int:
        return sum((e.query_key is not None) + (e.retry_key is not None) for e in self.per_subset_log)

    @property
    def query_keys(self) -> List[str]:
        keys = []
        for e in self.per_subset_log:
            keys.extend(k for k in (e.query_key, e.retry_key) if k is not None)
        return keys

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TournamentResult":
        return cls(
            query_id=data["query_id"],
            true_author=data["true_author"],
            rounds=[list(r) for r in data["rounds"]],
            winner=data["winner"],
            per_subset_log=[SubsetLogEntry(**e) for e in data.get("per_subset_log", [])],
        )


# -----------------------------------------------------------
# PARTITIONING
# -----------------------------------------------------------
def _subset_sizes(n: int, subset_size: int) -> List[int]:
    count = math.ceil(n / subset_size)
    base, extra = divmod(n, count)
    return [base + 1] * extra + [base] * (count - extra)


def partition(pool: Sequence[str], subset_size: int) -> List[List[str]]:
    """Contiguous balanced split: ceil(n/s) subsets whose sizes differ by at most 1"""
    if not pool:
        raise ValueError("❌ Cannot partition an empty pool")
    if subset_size < 2:
        raise ValueError(f"❌ subset_size must be >= 2, got {subset_size}")

    subsets, start = [], 0
    for size in _subset_sizes(len(pool), subset_size):
        subsets.append(list(pool[start:start + size]))
        start += size
    return subsets


def survivor_chain(n: int, subset_size: int) -> List[int]:
    if n < 1:
        raise ValueError("❌ Pool size must be >= 1")
    chain = [n]
    while chain[-1] > 1:
        chain.append(math.ceil(chain[-1] / subset_size))
    return chain


def subset_query_count(n: int, subset_size: int) -> int:
    """Queries a full tournament issues when every answer parses"""
    total = 0
    for size in survivor_chain(n, subset_size)[:-1]:
        total += sum(1 for s in _subset_sizes(size, subset_size) if s >= 2)
    return total


# -----------------------------------------------------------
# SUBSET QUERIES
# -----------------------------------------------------------
def _render(query, subset, refs, cfg: TournamentConfig, template: PromptTemplate) -> RenderedPrompt:
    groups = []
    for author in subset:
        samples = list(refs.get(author, ()))[:cfg.shots_per_author]
        if len(samples) < cfg.shots_per_author:
            raise ValueError(
                f"❌ Author {author} has {len(samples)} reference(s), tournament needs {cfg.shots_per_author}"
            )
        groups.append((author, samples))
    return render_tournament(
        template, groups, query,
        seed=cfg.seed,
        max_subset_size=cfg.subset_size,
        bytes_per_token=cfg.bytes_per_token,
    )


def _ask(client: LLMClient, p: RenderedPrompt, subset, cfg: TournamentConfig):
    over = check_budget(p, cfg.token_limit, cfg.reserved_output_tokens)
    if over is not None:
        raise TournamentBudgetError(
            f"❌ Tournament prompt over budget for a subset of {len(subset)}: {over.message}"
        )

    request = client.request(p.text)
    response = client.complete(request)
    verdict = parse_attribution(response.text, p.label_map)
    winner = verdict.author if verdict.kind is AttributionKind.CHOSEN and verdict.author in subset else None
    return cache_key(request), winner


def run_subset(
    query: CodeSample,
    subset: Sequence[str],
    refs: Mapping[str, Sequence[CodeSample]],
    cfg: TournamentConfig,
    client: LLMClient,
    template: PromptTemplate,
    round_index: int = 0,
) -> SubsetLogEntry:
    """One subset query; the entry's winner is the author advancing"""
    subset = list(subset)
    if len(subset) == 1:
        return SubsetLogEntry(round_index, subset, subset[0])

    prompt = _render(query, subset, refs, cfg, template)
    key, winner = _ask(client, prompt, subset, cfg)
    if winner is not None:
        return SubsetLogEntry(round_index, subset, winner, key)

    text = prompt.text + "\n" + FORMAT_REMINDER + "\n"
    reminded = replace(prompt, text=text, token_estimate=estimate_tokens(text, cfg.bytes_per_token))
    retry_key, winner = _ask(client, reminded, subset, cfg)
    if winner is not None:
        return SubsetLogEntry(round_index, subset, winner, key, retry_key)

    logger.warning(
        "⚠️ Forced win: query %s, round %d, subset of %d -> %s (no usable answer after retry)",
        query.sample_id, round_index, len(subset), subset[0],
    )
    return SubsetLogEntry(round_index, subset, subset[0], key, retry_key, forced=True)


def run_tournament(
    query: CodeSample,
    pool: Sequence[str],
    refs: Mapping[str, Sequence[CodeSample]],
    cfg: TournamentConfig,
    client: LLMClient,
    template: PromptTemplate,
) -> TournamentResult:
    if not pool:
        raise ValueError("❌ Tournament pool is empty")

    current = list(pool)
    random.Random(f"{cfg.seed}:{query.sample_id}").shuffle(current)
    rounds = [current]
    log: List[SubsetLogEntry] = []

    round_index = 0
    while len(current) > 1:
        subsets = partition(current, cfg.subset_size)

        def play(subset, r=round_index):
            return run_subset(query, subset, refs, cfg, client, template, r)

        # rounds are barriers: every winner of round r exists before round r + 1
        if cfg.max_in_flight <= 1:
            entries = [play(s) for s in subsets]
        else:
            with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool_executor:
                entries = list(pool_executor.map(play, subsets))

        log.extend(entries)
        current = [e.winner for e in entries]
        rounds.append(current)
        round_index += 1

    result = TournamentResult(
        query_id=query.sample_id,
        true_author=query.author,
        rounds=rounds,
        winner=current[0],
        per_subset_log=log,
    )
    logger.debug(
        "🏆 %s: %s after %d round(s) (true author %s)",
        query.sample_id, result.winner, len(rounds) - 1, query.author,
    )
    return result


# -----------------------------------------------------------
# SURVIVAL
# -----------------------------------------------------------
def survival_round(result: TournamentResult, true_author: Optional[str] = None) -> int:
    """Largest round index whose survivor set still holds the true author"""
    true_author = true_author or result.true_author
    if true_author not in result.rounds[0]:
        raise ValueError(f"❌ Author {true_author} is not in the pool of {result.query_id}")
    reached = 0
    for i, survivors in enumerate(result.rounds):
        if true_author in survivors:
            reached = i
    return reached


def simulate_round_accuracy(
    pool_size: int, subset_size: int, p: float, trials: int, seed: int = 0
) -> List[float]:
    """
    Monte-Carlo survival fractions per round index for an oracle that keeps
    the true author with probability p in every subset of two or more.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"❌ p must be in [0, 1], got {p}")
    chain = survivor_chain(pool_size, subset_size)
    rng = random.Random(seed)
    survived = [0] * len(chain)

    for _ in range(trials):
        position = rng.randrange(pool_size)
        survived[0] += 1
        for i, n in enumerate(chain[:-1]):
            start = 0
            for index, size in enumerate(_subset_sizes(n, subset_size)):
                if position < start + size:
                    break
                start += size
            if size >= 2 and rng.random() >= p:
                break
            position = index
            survived[i + 1] += 1

    return [count / trials for count in survived]
