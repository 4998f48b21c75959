"""
Corpus Engine - load, filter and sample author-labelled source code

Two on-disk layouts are supported:
- author_dirs: <root>/<author_id>/<files>, task id = file stem
- manifest:    JSON array of {author, task, path, language}; paths are
               relative to the manifest file

Everything returned from here is immutable and safe to share between
worker threads.
"""

import itertools
import json
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

# Above this many candidate sample pairs, different-author pairs are drawn
# by rejection sampling instead of full enumeration
PAIR_ENUMERATION_LIMIT = 200_000

LANGUAGE_ALIASES = {
    "c++": "cpp",
    "cpp": "cpp",
    "cc": "cpp",
    "cxx": "cpp",
    "java": "java",
}

EXTENSION_LANGUAGES = {
    ".cpp": "cpp",
    ".cc": "cpp",
    ".cxx": "cpp",
    ".c++": "cpp",
    ".hpp": "cpp",
    ".h": "cpp",
    ".java": "java",
}

MANIFEST_FIELDS = ("author", "task", "path", "language")
PAIRING_FIELDS = ("transformed_path", "source_author", "imitated_author", "setting")
ADVERSARIAL_SETTINGS = ("evasion", "imitation")


# -----------------------------------------------------------
# ERRORS
# -----------------------------------------------------------
class CorpusError(Exception):
    """Base class for corpus loading and sampling failures"""


class EmptyCorpus(CorpusError):
    pass


class InsufficientData(CorpusError):
    pass


class PairingError(CorpusError):
    pass


# -----------------------------------------------------------
# TYPES
# -----------------------------------------------------------
class CorpusLayout(str, Enum):
    AUTHOR_DIRS = "author_dirs"
    MANIFEST = "manifest"


class Expected(str, Enum):
    SAME = "same"
    DIFFERENT = "different"


def normalize_language(name: str) -> str:
    key = name.strip().lower()
    return LANGUAGE_ALIASES.get(key, key)


def count_loc(text: str) -> int:
    """Physical newline-delimited lines, blanks included"""
    if not text:
        return 0
    return text.count("\n") + (0 if text.endswith("\n") else 1)


@dataclass(frozen=True)
class CodeSample:
    author: str
    task: str
    language: str
    text: str
    path: str = ""
    loc: int = field(init=False)

    def __post_init__(self):
        if not self.author:
            raise ValueError("❌ CodeSample author must be non-empty")
        if not self.text:
            raise ValueError(f"❌ CodeSample text is empty: {self.author}/{self.task}")
        object.__setattr__(self, "language", normalize_language(self.language))
        object.__setattr__(self, "loc", count_loc(self.text))

    @property
    def sample_id(self) -> str:
        return self.path or f"{self.author}/{self.task}"


@dataclass(frozen=True)
class Corpus:
    samples: Tuple[CodeSample, ...]
    skipped: Tuple[Tuple[str, str], ...] = ()
    index: Dict[str, Tuple[CodeSample, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "skipped", tuple(self.skipped))
        grouped: Dict[str, List[CodeSample]] = {}
        for sample in self.samples:
            grouped.setdefault(sample.author, []).append(sample)
        object.__setattr__(self, "index", {a: tuple(s) for a, s in grouped.items()})

    @property
    def authors(self) -> List[str]:
        return list(self.index)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FilterCriteria:
    min_loc: int = 0
    max_loc: Optional[int] = None  # None = unbounded
    min_files_per_author: int = 1
    language: Optional[str] = None  # None = any language

    def __post_init__(self):
        if self.min_loc < 0:
            raise ValueError(f"❌ min_loc must be >= 0, got {self.min_loc}")
        if self.max_loc is not None and self.max_loc < self.min_loc:
            raise ValueError(f"❌ min_loc ({self.min_loc}) exceeds max_loc ({self.max_loc})")
        if self.min_files_per_author < 1:
            raise ValueError(f"❌ min_files_per_author must be >= 1, got {self.min_files_per_author}")
        if self.language is not None:
            object.__setattr__(self, "language", normalize_language(self.language))

    def accepts(self, sample: CodeSample) -> bool:
        if sample.loc < self.min_loc:
            return False
        if self.max_loc is not None and sample.loc > self.max_loc:
            return False
        return self.language is None or sample.language == self.language


@dataclass(frozen=True)
class VerificationCase:
    left: CodeSample
    right: CodeSample
    expected: Expected
    case_id: str = ""
    setting: str = ""  # "evasion" / "imitation" for adversarial pairs

    def __post_init__(self):
        object.__setattr__(self, "expected", Expected(self.expected))
        same_author = self.left.author == self.right.author
        if (self.expected is Expected.SAME) != same_author:
            raise ValueError(
                f"❌ Case {self.case_id}: expected={self.expected.value} but authors are "
                f"{self.left.author!r} and {self.right.author!r}"
            )
        if self.left.task == self.right.task:
            raise ValueError(f"❌ Case {self.case_id}: both samples come from task {self.left.task!r}")


@dataclass(frozen=True)
class AttributionCase:
    references: Dict[str, Tuple[CodeSample, ...]]
    query: CodeSample
    expected: Optional[str]  # None = none of the candidates
    case_id: str = ""

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"❌ Case {self.case_id}: no candidate references")
        shots = {len(refs) for refs in self.references.values()}
        if len(shots) != 1 or 0 in shots:
            raise ValueError(f"❌ Case {self.case_id}: reference lists must share one length >= 1")
        for author, refs in self.references.items():
            if any(ref.author != author for ref in refs):
                raise ValueError(f"❌ Case {self.case_id}: reference list for {author!r} holds foreign samples")
        own = self.references.get(self.query.author, ())
        if any(ref.task == self.query.task for ref in own):
            raise ValueError(f"❌ Case {self.case_id}: query task {self.query.task!r} is among its author's references")
        if self.query.author in self.references:
            if self.expected != self.query.author:
                raise ValueError(f"❌ Case {self.case_id}: expected must be the query author")
        elif self.expected is not None:
            raise ValueError(f"❌ Case {self.case_id}: out-of-distribution case must expect none")

    @property
    def in_distribution(self) -> bool:
        return self.expected is not None

    @property
    def shots(self) -> int:
        return len(next(iter(self.references.values())))

    @property
    def candidates(self) -> List[str]:
        return list(self.references)


@dataclass(frozen=True)
class TournamentSet:
    """Fixed per-author references plus the query samples of one run"""
    references: Dict[str, Tuple[CodeSample, ...]]
    queries: Tuple[CodeSample, ...]


@dataclass(frozen=True)
class PairingRow:
    transformed_path: str
    source_author: str
    imitated_author: str
    setting: str

    def __post_init__(self):
        if self.setting not in ADVERSARIAL_SETTINGS:
            raise ValueError(f"❌ Unknown adversarial setting {self.setting!r}")
        if self.source_author == self.imitated_author:
            raise ValueError(f"❌ Pairing for {self.transformed_path}: source and imitated author are identical")
        object.__setattr__(self, "transformed_path", Path(self.transformed_path).as_posix())


# -----------------------------------------------------------
# LOADING
# -----------------------------------------------------------
def load_corpus(root, layout=CorpusLayout.AUTHOR_DIRS) -> Corpus:
    root = Path(root)
    layout = CorpusLayout(layout)

    if not root.exists():
        raise CorpusError(f"❌ Corpus root not found: {root}")

    rows = _manifest_rows(root) if layout is CorpusLayout.MANIFEST else _author_dir_rows(root)

    samples: List[CodeSample] = []
    skipped: List[Tuple[str, str]] = []
    for author, task, path, language, rel in rows:
        try:
            text = path.read_text(encoding="utf-8")
        except UnicodeDecodeError:
            skipped.append((rel, "not valid UTF-8"))
            logger.warning("⚠️ Skipping %s: not valid UTF-8", rel)
            continue
        except OSError as e:
            reason = "missing file" if isinstance(e, FileNotFoundError) else f"unreadable ({e.strerror or e})"
            skipped.append((rel, reason))
            logger.warning("⚠️ Skipping %s: %s", rel, reason)
            continue

        if not text:
            skipped.append((rel, "empty file"))
            logger.warning("⚠️ Skipping %s: empty file", rel)
            continue

        samples.append(CodeSample(author=author, task=task, language=language, text=text, path=rel))

    if not samples:
        raise EmptyCorpus(f"❌ No readable source files under {root} ({len(skipped)} skipped)")

    samples.sort(key=lambda s: (s.author, s.path))
    corpus = Corpus(tuple(samples), tuple(skipped))
    logger.info(
        "✅ Loaded %d samples from %d authors (%d skipped) from %s",
        len(corpus), len(corpus.index), len(skipped), root,
    )
    return corpus


def _author_dir_rows(root: Path):
    rows = []
    for author_dir in sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")):
        for path in sorted(author_dir.rglob("*")):
            if not path.is_file() or path.name.startswith("."):
                continue
            suffix = path.suffix.lower()
            language = EXTENSION_LANGUAGES.get(suffix, suffix.lstrip(".") or "text")
            rows.append((author_dir.name, path.stem, path, language, path.relative_to(root).as_posix()))
    return rows


def _manifest_rows(root: Path):
    manifest = root / MANIFEST_NAME if root.is_dir() else root
    try:
        entries = json.loads(manifest.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorpusError(f"❌ Manifest not found: {manifest}")
    except (OSError, ValueError) as e:
        raise CorpusError(f"❌ Cannot read manifest {manifest}: {e}")

    if not isinstance(entries, list):
        raise CorpusError(f"❌ Manifest {manifest} must be a JSON array")

    rows = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise CorpusError(f"❌ Manifest row {i} is not an object")
        missing = [key for key in MANIFEST_FIELDS if not entry.get(key)]
        if missing:
            raise CorpusError(f"❌ Manifest row {i} missing field(s): {', '.join(missing)}")
        rel = Path(entry["path"]).as_posix()
        rows.append((str(entry["author"]), str(entry["task"]), manifest.parent / rel, str(entry["language"]), rel))
    return rows


def load_pairing(path) -> List[PairingRow]:
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise PairingError(f"❌ Cannot read pairing manifest {path}: {e}")
    if not isinstance(entries, list):
        raise PairingError(f"❌ Pairing manifest {path} must be a JSON array")

    rows = []
    for i, entry in enumerate(entries):
        missing = [key for key in PAIRING_FIELDS if not isinstance(entry, dict) or not entry.get(key)]
        if missing:
            raise PairingError(f"❌ Pairing row {i} missing field(s): {', '.join(missing)}")
        try:
            rows.append(PairingRow(**{key: str(entry[key]) for key in PAIRING_FIELDS}))
        except ValueError as e:
            raise PairingError(f"❌ Pairing row {i}: {e}")
    return rows


# -----------------------------------------------------------
# FILTERING
# -----------------------------------------------------------
def filter_corpus(c: Corpus, f: FilterCriteria) -> Corpus:
    kept = [s for s in c.samples if f.accepts(s)]
    per_author = Counter(s.author for s in kept)
    kept = [s for s in kept if per_author[s.author] >= f.min_files_per_author]

    if not kept:
        raise EmptyCorpus(
            f"❌ Filter left no samples (loc {f.min_loc}..{f.max_loc}, "
            f">= {f.min_files_per_author} files, language {f.language})"
        )

    filtered = Corpus(tuple(kept), c.skipped)
    logger.info(
        "🔎 Filter kept %d/%d samples, %d/%d authors",
        len(filtered), len(c), len(filtered.index), len(c.index),
    )
    return filtered


# -----------------------------------------------------------
# VERIFICATION SAMPLING
# -----------------------------------------------------------
def sample_verification_cases(c: Corpus, n_same: int, n_diff: int, seed: int) -> List[VerificationCase]:
    if n_same < 0 or n_diff < 0:
        raise ValueError("❌ Case counts must be >= 0")

    rng = random.Random(seed)
    samples = c.samples

    same_pool = _same_author_pairs(c)
    if n_same > len(same_pool):
        raise InsufficientData(
            f"❌ n_same={n_same} but the corpus only has {len(same_pool)} "
            f"same-author pairs from different tasks"
        )
    same_pairs = rng.sample(same_pool, n_same)
    diff_pairs = _sample_different_pairs(c, n_diff, rng)

    cases = []
    for pairs, expected in ((same_pairs, Expected.SAME), (diff_pairs, Expected.DIFFERENT)):
        for a, b in pairs:
            if rng.random() < 0.5:
                a, b = b, a
            cases.append((samples[a], samples[b], expected))
    rng.shuffle(cases)

    return [
        VerificationCase(left, right, expected, case_id=f"verify-{i:04d}")
        for i, (left, right, expected) in enumerate(cases, 1)
    ]


def _same_author_pairs(c: Corpus) -> List[Tuple[int, int]]:
    by_author: Dict[str, List[int]] = defaultdict(list)
    for i, sample in enumerate(c.samples):
        by_author[sample.author].append(i)

    pairs = []
    for positions in by_author.values():
        for a, b in itertools.combinations(positions, 2):
            if c.samples[a].task != c.samples[b].task:
                pairs.append((a, b))
    return pairs


def count_different_pairs(c: Corpus) -> int:
    """Unordered sample pairs with different authors and different tasks"""
    total = len(c.samples)
    per_author = Counter(s.author for s in c.samples)
    per_task = Counter(s.task for s in c.samples)
    per_task_author = Counter((s.task, s.author) for s in c.samples)

    cross_author = (total * total - sum(n * n for n in per_author.values())) // 2
    same_task_cross_author = (
        sum(m * m for m in per_task.values()) - sum(m * m for m in per_task_author.values())
    ) // 2
    return cross_author - same_task_cross_author


def _sample_different_pairs(c: Corpus, n: int, rng: random.Random) -> List[Tuple[int, int]]:
    if n == 0:
        return []

    available = count_different_pairs(c)
    if n > available:
        raise InsufficientData(
            f"❌ n_diff={n} but the corpus only has {available} "
            f"different-author pairs from different tasks"
        )

    samples = c.samples
    total = len(samples)
    if total * (total - 1) // 2 <= PAIR_ENUMERATION_LIMIT or 2 * n > available:
        pool = [
            (a, b)
            for a, b in itertools.combinations(range(total), 2)
            if samples[a].author != samples[b].author and samples[a].task != samples[b].task
        ]
        return rng.sample(pool, n)

    seen = set()
    pairs = []
    while len(pairs) < n:
        a, b = rng.randrange(total), rng.randrange(total)
        pair = (min(a, b), max(a, b))
        if a == b or pair in seen:
            continue
        if samples[a].author == samples[b].author or samples[a].task == samples[b].task:
            continue
        seen.add(pair)
        pairs.append(pair)
    return pairs


# -----------------------------------------------------------
# ATTRIBUTION SAMPLING
# -----------------------------------------------------------
def _can_split(samples: Sequence[CodeSample], n: int) -> bool:
    return any(sum(1 for o in samples if o.task != s.task) >= n for s in samples)


def _split(samples: Sequence[CodeSample], n: int, rng: random.Random) -> Tuple[CodeSample, Tuple[CodeSample, ...]]:
    """Pick a query and n references from other tasks"""
    order = list(samples)
    rng.shuffle(order)
    for query in order:
        others = [s for s in samples if s.task != query.task]
        if len(others) >= n:
            return query, tuple(rng.sample(others, n))
    raise InsufficientData(f"❌ Author {samples[0].author!r} cannot supply {n} references plus an unseen query")


def sample_attribution_cases(
    c: Corpus, k: int, n: int, n_in: int, n_out: int, seed: int
) -> List[AttributionCase]:
    if k < 1 or n < 1:
        raise ValueError(f"❌ k and n must be >= 1 (k={k}, n={n})")
    if n_in < 0 or n_out < 0:
        raise ValueError("❌ Case counts must be >= 0")

    rng = random.Random(seed)
    splittable = [a for a, samples in c.index.items() if _can_split(samples, n)]
    with_refs = [a for a, samples in c.index.items() if len(samples) >= n]

    if n_in > 0 and len(splittable) < k:
        raise InsufficientData(
            f"❌ k={k} but only {len(splittable)} authors have {n} references "
            f"plus a query from an unseen task"
        )
    if n_out > 0:
        if len(c.index) <= k:
            raise InsufficientData(
                f"❌ k={k} uses every corpus author; no out-of-distribution author available"
            )
        if len(with_refs) < k:
            raise InsufficientData(f"❌ k={k} but only {len(with_refs)} authors have {n} samples")

    cases = []
    for _ in range(n_in):
        authors = rng.sample(splittable, k)
        true_author = rng.choice(authors)
        query, own_refs = _split(c.index[true_author], n, rng)
        references = {
            a: own_refs if a == true_author else tuple(rng.sample(c.index[a], n))
            for a in authors
        }
        cases.append((references, query, true_author))

    for _ in range(n_out):
        authors = rng.sample(with_refs, k)
        chosen = set(authors)
        outside = [a for a in c.index if a not in chosen]
        query = rng.choice(c.index[rng.choice(outside)])
        references = {a: tuple(rng.sample(c.index[a], n)) for a in authors}
        cases.append((references, query, None))

    rng.shuffle(cases)
    return [
        AttributionCase(references, query, expected, case_id=f"attribute-k{k}-n{n}-{i:04d}")
        for i, (references, query, expected) in enumerate(cases, 1)
    ]


def sample_tournament_queries(c: Corpus, shots: int, n_queries: int, seed: int) -> TournamentSet:
    """
    Fix `shots` references per author once for the whole run and draw the
    query samples from tasks unseen in that author's references.
    """
    if shots < 1 or n_queries < 0:
        raise ValueError(f"❌ shots must be >= 1 and n_queries >= 0 (shots={shots}, n_queries={n_queries})")

    rng = random.Random(seed)
    references: Dict[str, Tuple[CodeSample, ...]] = {}
    candidates: List[CodeSample] = []

    for author, samples in c.index.items():
        if not _can_split(samples, shots):
            continue
        _, refs = _split(samples, shots, rng)
        ref_tasks = {r.task for r in refs}
        references[author] = refs
        candidates.extend(s for s in samples if s.task not in ref_tasks)

    if not references:
        raise InsufficientData(f"❌ No author has {shots + 1} samples from distinct tasks")
    if n_queries > len(candidates):
        raise InsufficientData(
            f"❌ n_queries={n_queries} but only {len(candidates)} unseen-task samples are available"
        )

    queries = tuple(rng.sample(candidates, n_queries))
    logger.info("🏁 Tournament pool: %d authors, %d queries", len(references), len(queries))
    return TournamentSet(references=references, queries=queries)


# -----------------------------------------------------------
# ADVERSARIAL PAIRS
# -----------------------------------------------------------
def build_adversarial_cases(
    originals: Corpus,
    transformed: Corpus,
    pairing: Sequence[PairingRow],
    seed: int = 0,
) -> List[VerificationCase]:
    """
    evasion:   original by A  vs  A's code restyled towards B  -> same
    imitation: original by A  vs  B's code restyled towards A  -> different
    """
    rng = random.Random(seed)
    by_path = {s.path: s for s in transformed.samples}

    cases = []
    for i, row in enumerate(pairing):
        restyled = by_path.get(row.transformed_path)
        if restyled is None:
            raise PairingError(f"❌ Pairing row {i}: transformed sample {row.transformed_path!r} not found")

        anchor_author = row.source_author if row.setting == "evasion" else row.imitated_author
        anchors = [s for s in originals.index.get(anchor_author, ()) if s.task != restyled.task]
        if not anchors:
            raise PairingError(
                f"❌ Pairing row {i}: no original sample by {anchor_author!r} "
                f"from a task other than {restyled.task!r}"
            )

        expected = Expected.SAME if row.setting == "evasion" else Expected.DIFFERENT
        cases.append(
            VerificationCase(
                left=rng.choice(anchors),
                right=replace(restyled, author=row.source_author),
                expected=expected,
                case_id=f"adversarial-{i + 1:04d}",
                setting=row.setting,
            )
        )
    return cases
