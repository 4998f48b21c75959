"""
Style Oracle - stylometric features and a deterministic mock LLM backend

The mock reads the code blocks back out of a prompt rendered by
prompt_engine, scores candidates with exp(-distance) over z-scored style
features, and answers in the constrained ANSWER format. Noise and
"unsure" replies are drawn from an RNG keyed by the request's cache key,
so concurrency cannot reorder outcomes.
"""

import json
import math
import random
import re
import statistics
import threading
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from corpus_engine import CodeSample, Expected, VerificationCase
from llm_backend import ChatRequest, ChatResponse, ProtocolError, cache_key
from prompt_engine import ANSWER_LINES, QUERY_HEADER, TaskKind, estimate_tokens

KEYWORDS_PATH = Path(__file__).parent / "data" / "keywords.json"
DEFAULT_KEYWORD_LANGUAGE = "cpp"
DEFAULT_THRESHOLD = 0.5
TAB_WIDTH = 4

IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
FENCE_OPEN = re.compile(r"^(`{3,})([^`]*)$")
REFERENCE_HEADER = re.compile(r"^(Author \d+), sample \d+:$")
SNIPPET_HEADER = re.compile(r"^Code snippet (\d+):$")

# Per-feature scale used when a feature does not vary across the
# normalization pool (single reference, identical references)
FALLBACK_SCALES = (1.0, 0.5, 0.05, 0.05, 0.05, 0.25)
FALLBACK_KEYWORD_SCALE = 0.01
MIN_STD = 1e-9


# -----------------------------------------------------------
# FEATURES
# -----------------------------------------------------------
@lru_cache(maxsize=1)
def _keyword_table() -> Dict[str, Tuple[str, ...]]:
    with open(KEYWORDS_PATH, "r", encoding="utf-8") as f:
        return {language: tuple(words) for language, words in json.load(f).items()}


def keywords_for(language: str) -> Tuple[str, ...]:
    table = _keyword_table()
    return table.get(language, table[DEFAULT_KEYWORD_LANGUAGE])


@dataclass(frozen=True)
class StyleFeatureVector:
    mean_line_length: float
    indent_unit: int
    brace_same_line_ratio: float
    blank_line_ratio: float
    comment_ratio: float
    mean_identifier_length: float
    keyword_freqs: Tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.mean_line_length,
                float(self.indent_unit),
                self.brace_same_line_ratio,
                self.blank_line_ratio,
                self.comment_ratio,
                self.mean_identifier_length,
                *self.keyword_freqs,
            ],
            dtype=float,
        )


def physical_lines(text: str) -> List[str]:
    if not text:
        return []
    lines = text.split("\n")
    if text.endswith("\n"):
        lines.pop()
    return [line.rstrip("\r") for line in lines]


def _indent_width(line: str) -> int:
    width = 0
    for ch in line:
        if ch == " ":
            width += 1
        elif ch == "\t":
            width += TAB_WIDTH
        else:
            break
    return width


def _indent_unit(lines: Sequence[str]) -> int:
    """Most frequent positive indentation step between non-blank lines"""
    steps = Counter()
    previous = 0
    for line in lines:
        if not line.strip():
            continue
        width = _indent_width(line)
        if width > previous:
            steps[width - previous] += 1
        previous = width
    if not steps:
        return 0
    top = max(steps.values())
    return min(step for step, count in steps.items() if count == top)


def _is_comment(line: str) -> bool:
    stripped = line.strip()
    if stripped.startswith(("//", "/*", "*/", "* ")) or stripped == "*":
        return True
    return "//" in stripped


def extract_features(s: CodeSample) -> StyleFeatureVector:
    return _features_for_text(s.text, s.language)


@lru_cache(maxsize=65536)
def _features_for_text(text: str, language: str) -> StyleFeatureVector:
    lines = physical_lines(text)
    total = len(lines)

    blank = sum(1 for line in lines if not line.strip())
    comments = sum(1 for line in lines if line.strip() and _is_comment(line))
    brace_lines = [line.strip() for line in lines if "{" in line]
    same_line = sum(1 for line in brace_lines if not line.startswith("{"))

    keywords = keywords_for(language)
    keyword_set = set(keywords)
    tokens = IDENTIFIER.findall(text)
    identifiers = [t for t in tokens if t not in keyword_set]
    counts = Counter(t for t in tokens if t in keyword_set)

    return StyleFeatureVector(
        mean_line_length=sum(len(line) for line in lines) / total if total else 0.0,
        indent_unit=_indent_unit(lines),
        brace_same_line_ratio=same_line / len(brace_lines) if brace_lines else 0.0,
        blank_line_ratio=blank / total if total else 0.0,
        comment_ratio=comments / total if total else 0.0,
        mean_identifier_length=sum(map(len, identifiers)) / len(identifiers) if identifiers else 0.0,
        keyword_freqs=tuple(counts[k] / len(tokens) if tokens else 0.0 for k in keywords),
    )


# -----------------------------------------------------------
# LIKELIHOOD
# -----------------------------------------------------------
def _fallback_scales(width: int) -> np.ndarray:
    scales = list(FALLBACK_SCALES) + [FALLBACK_KEYWORD_SCALE] * (width - len(FALLBACK_SCALES))
    return np.array(scales[:width], dtype=float)


def _normalizer(pool: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = pool.mean(axis=0)
    std = pool.std(axis=0)
    return mean, np.where(std > MIN_STD, std, _fallback_scales(pool.shape[1]))


def score_candidates(references: Mapping[str, np.ndarray], query: np.ndarray) -> Dict[str, float]:
    """
    exp(-d) per candidate, d = distance from the query to the candidate's
    centroid after z-scoring every feature over all candidate references.
    """
    blocks = {author: np.atleast_2d(np.asarray(m, dtype=float)) for author, m in references.items()}
    mean, scale = _normalizer(np.vstack(list(blocks.values())))
    q = (np.asarray(query, dtype=float) - mean) / scale
    return {
        author: math.exp(-float(np.linalg.norm(q - ((m - mean) / scale).mean(axis=0))))
        for author, m in blocks.items()
    }


def oracle_likelihood(
    author_refs: Sequence[CodeSample],
    query: CodeSample,
    pool: Optional[Sequence[CodeSample]] = None,
) -> float:
    if not author_refs:
        raise ValueError("❌ oracle_likelihood needs at least one reference")
    pool = list(pool) if pool is not None else list(author_refs)

    matrix = np.vstack([extract_features(s).as_array() for s in pool])
    mean, scale = _normalizer(matrix)
    refs = (np.vstack([extract_features(s).as_array() for s in author_refs]) - mean) / scale
    q = (extract_features(query).as_array() - mean) / scale
    return math.exp(-float(np.linalg.norm(q - refs.mean(axis=0))))


def calibrate_threshold(cases: Sequence[VerificationCase]) -> float:
    """Midpoint of the median same-author and different-author likelihoods"""
    same = [oracle_likelihood([c.left], c.right) for c in cases if c.expected is Expected.SAME]
    different = [oracle_likelihood([c.left], c.right) for c in cases if c.expected is Expected.DIFFERENT]
    if not same or not different:
        raise ValueError("❌ Calibration needs both same-author and different-author cases")
    return (statistics.median(same) + statistics.median(different)) / 2


def write_calibration(path, cases: Sequence[VerificationCase], seed: int) -> float:
    """Calibrate on `cases` and store the threshold as JSON at `path`"""
    threshold = calibrate_threshold(cases)
    record = {
        "threshold": threshold,
        "same_pairs": sum(c.expected is Expected.SAME for c in cases),
        "different_pairs": sum(c.expected is Expected.DIFFERENT for c in cases),
        "seed": seed,
    }
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return threshold


def read_calibration(path) -> float:
    try:
        threshold = float(json.loads(Path(path).read_text(encoding="utf-8"))["threshold"])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ValueError(f"❌ Unreadable calibration file {path}: {e}")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"❌ Calibrated threshold {threshold} in {path} is outside [0, 1]")
    return threshold


# -----------------------------------------------------------
# PROMPT READ-BACK
# -----------------------------------------------------------
@dataclass(frozen=True)
class CodeBlock:
    header: str
    language: str
    text: str


def parse_code_blocks(text: str) -> List[CodeBlock]:
    blocks = []
    lines = text.split("\n")
    header = ""
    i = 0
    while i < len(lines):
        match = FENCE_OPEN.match(lines[i])
        if not match:
            if lines[i].strip():
                header = lines[i].strip()
            i += 1
            continue

        ticks = match.group(1)
        end = i + 1
        while end < len(lines) and lines[end] != ticks:
            end += 1
        if end == len(lines):
            raise ProtocolError("❌ Unterminated code block in prompt")
        blocks.append(CodeBlock(header, match.group(2).strip(), "\n".join(lines[i + 1:end])))
        header = ""
        i = end + 1
    return blocks


def prompt_kind(text: str) -> TaskKind:
    # the attribution line contains the tournament line, so it goes first
    for kind in (TaskKind.VERIFY, TaskKind.ATTRIBUTE, TaskKind.TOURNAMENT):
        if ANSWER_LINES[kind] in text:
            return kind
    raise ProtocolError("❌ Prompt carries no recognised answer format")


def _sample(block: CodeBlock, name: str) -> CodeSample:
    if not block.text:
        raise ProtocolError(f"❌ Empty code block under {block.header!r}")
    return CodeSample(author="unknown", task=name, language=block.language or "text", text=block.text)


def answer_text(answer: str, reason: str = "") -> str:
    return f"{reason}\nANSWER: {answer}" if reason else f"ANSWER: {answer}"


# -----------------------------------------------------------
# ORACLE
# -----------------------------------------------------------
@dataclass(frozen=True)
class StyleOracle:
    epsilon: float = 0.0
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    unsure_rate: float = 0.0

    def __post_init__(self):
        for name in ("epsilon", "threshold", "unsure_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"❌ {name} must be in [0, 1], got {value}")

    @property
    def model_id(self) -> str:
        return (
            f"mock-oracle/eps={self.epsilon}/seed={self.seed}"
            f"/threshold={self.threshold}/unsure={self.unsure_rate}"
        )

    def answer(self, decision: str, options: Sequence[str], key: str) -> str:
        """Apply the seeded unsure/noise draws to an oracle decision"""
        rng = random.Random(f"{self.seed}:{key}")
        if rng.random() < self.unsure_rate:
            return "unsure"
        if rng.random() < self.epsilon:
            wrong = [option for option in options if option != decision]
            if wrong:
                return rng.choice(wrong)
        return decision

    def decide(self, text: str) -> Tuple[str, List[str], str]:
        """(decision, possible answers, reason) for a rendered prompt"""
        kind = prompt_kind(text)
        blocks = parse_code_blocks(text)

        if kind is TaskKind.VERIFY:
            snippets = [b for b in blocks if SNIPPET_HEADER.match(b.header)]
            if len(snippets) != 2:
                raise ProtocolError(f"❌ Verification prompt holds {len(snippets)} snippets, expected 2")
            left, right = (_sample(b, f"snippet{i}") for i, b in enumerate(snippets, 1))
            likelihood = oracle_likelihood([left], right)
            decision = "yes" if likelihood >= self.threshold else "no"
            return decision, ["yes", "no"], f"Stylistic likelihood {likelihood:.3f} (threshold {self.threshold})."

        references: Dict[str, List[CodeSample]] = {}
        query = None
        for i, block in enumerate(blocks):
            match = REFERENCE_HEADER.match(block.header)
            if match:
                references.setdefault(match.group(1), []).append(_sample(block, f"ref{i}"))
            elif block.header == QUERY_HEADER:
                query = _sample(block, "query")
        if not references or query is None:
            raise ProtocolError("❌ Prompt lacks labelled references or the query block")

        pool = [ref for refs in references.values() for ref in refs]
        matrix = {label: np.vstack([extract_features(r).as_array() for r in refs]) for label, refs in references.items()}
        scores = score_candidates(matrix, extract_features(query).as_array())
        labels = list(references)
        best = max(labels, key=lambda label: (scores[label], -labels.index(label)))
        reason = f"Closest stylistic match: {best} (likelihood {scores[best]:.3f}, pool of {len(pool)} samples)."

        if kind is TaskKind.ATTRIBUTE:
            if oracle_likelihood(references[best], query) < self.threshold:
                return "none", labels + ["none"], reason
            return best, labels + ["none"], reason
        return best, labels, reason


class MockBackend:
    """Backend adapter around StyleOracle; counts invocations"""

    def __init__(self, oracle: StyleOracle):
        self.oracle = oracle
        self.model_id = oracle.model_id
        self.calls = 0
        self._lock = threading.Lock()

    def invoke(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        return mock_complete(self.oracle, request)


def mock_complete(oracle: StyleOracle, r: ChatRequest) -> ChatResponse:
    decision, options, reason = oracle.decide(r.user_text)
    text = answer_text(oracle.answer(decision, options, cache_key(r)), reason)
    prompt = (r.system_text or "") + r.user_text
    return ChatResponse(
        text=text,
        prompt_tokens=estimate_tokens(prompt),
        output_tokens=estimate_tokens(text),
    )
