"""
Prompt Engine - render the P1/P2/P3 prompt ladder

Template files live in templates/ as <task_kind>_<tier>.txt, plus
guidance_<tier>.txt for the feature guidance of P2/P3 and
adversarial_note.txt. Rendering is pure: the same template, case, flag
and seed always give the same bytes.
"""

import hashlib
import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from corpus_engine import AttributionCase, CodeSample, VerificationCase

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
ADVERSARIAL_NOTE_FILE = "adversarial_note.txt"

TIERS = ("P1", "P2", "P3")
DEFAULT_BYTES_PER_TOKEN = 4
RESERVED_OUTPUT_TOKENS = 256
DEFAULT_MAX_SUBSET_SIZE = 12

SNIPPET_HEADER = "Code snippet {index}:"
REFERENCE_HEADER = "{label}, sample {index}:"
QUERY_HEADER = "Query code:"
LABEL_FORMAT = "Author {index}"


class TaskKind(str, Enum):
    VERIFY = "verify"
    ATTRIBUTE = "attribute"
    TOURNAMENT = "tournament"


ANSWER_LINES = {
    TaskKind.VERIFY: "ANSWER: yes|no|unsure",
    TaskKind.ATTRIBUTE: "ANSWER: <label>|none|unsure",
    TaskKind.TOURNAMENT: "ANSWER: <label>",
}

FORMAT_REMINDER = (
    "Reminder: end your reply with exactly one line of the form "
    "\"ANSWER: <label>\", where <label> is one of the candidate labels above."
)

REQUIRED_PLACEHOLDERS = {
    TaskKind.VERIFY: ("code_a", "code_b"),
    TaskKind.ATTRIBUTE: ("references", "query_code"),
    TaskKind.TOURNAMENT: ("references", "query_code"),
}
TEXT_PLACEHOLDERS = ("adversarial_note", "feature_guidance", "candidate_list")
CODE_PLACEHOLDERS = ("code_a", "code_b", "references", "query_code")
KNOWN_PLACEHOLDERS = TEXT_PLACEHOLDERS + CODE_PLACEHOLDERS

PLACEHOLDER = re.compile(r"\{(\w+)\}")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    task_kind: TaskKind
    body: str
    feature_guidance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        if self.id not in TIERS:
            raise TemplateError(f"❌ Unknown template tier {self.id!r}")

        present = set(PLACEHOLDER.findall(self.body))
        missing = [p for p in REQUIRED_PLACEHOLDERS[self.task_kind] if p not in present]
        if missing:
            raise TemplateError(
                f"❌ Template {self.task_kind.value}_{self.id} lacks placeholder(s): "
                + ", ".join("{" + p + "}" for p in missing)
            )
        foreign = [
            p for p in CODE_PLACEHOLDERS
            if p in present and p not in REQUIRED_PLACEHOLDERS[self.task_kind]
        ]
        if foreign:
            raise TemplateError(
                f"❌ Template {self.task_kind.value}_{self.id} uses placeholder(s) of another task kind: "
                + ", ".join(foreign)
            )

        if self.id == "P1" and self.feature_guidance:
            raise TemplateError("❌ P1 templates carry no feature guidance")
        if self.id != "P1":
            if not self.feature_guidance.strip():
                raise TemplateError(f"❌ {self.id} templates need non-empty feature guidance")
            if "feature_guidance" not in present:
                raise TemplateError(f"❌ Template {self.task_kind.value}_{self.id} lacks {{feature_guidance}}")


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    token_estimate: int
    case_fingerprint: str
    template_id: str
    task_kind: TaskKind
    label_map: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.token_estimate <= 0:
            raise ValueError("❌ Rendered prompt has no tokens")


@dataclass(frozen=True)
class BudgetExceeded:
    token_estimate: int
    reserved_output_tokens: int
    limit: int

    @property
    def message(self) -> str:
        return (
            f"prompt needs ~{self.token_estimate} tokens + {self.reserved_output_tokens} "
            f"reserved for output, limit is {self.limit}"
        )


@dataclass(frozen=True)
class TemplateSet:
    templates: Dict[Tuple[TaskKind, str], PromptTemplate]
    adversarial_note: str

    def get(self, kind, tier: str) -> PromptTemplate:
        key = (TaskKind(kind), tier)
        if key not in self.templates:
            raise TemplateError(f"❌ No template {key[0].value}_{tier}.txt loaded")
        return self.templates[key]


# -----------------------------------------------------------
# LOADING
# -----------------------------------------------------------
def load_templates(directory=TEMPLATE_DIR) -> TemplateSet:
    directory = Path(directory)
    if not directory.is_dir():
        raise TemplateError(f"❌ Template directory not found: {directory}")

    note_path = directory / ADVERSARIAL_NOTE_FILE
    if not note_path.exists():
        raise TemplateError(f"❌ Missing {ADVERSARIAL_NOTE_FILE} in {directory}")
    note = note_path.read_text(encoding="utf-8").strip()

    templates = {}
    for tier in TIERS:
        guidance_path = directory / f"guidance_{tier}.txt"
        guidance = guidance_path.read_text(encoding="utf-8").strip() if guidance_path.exists() else ""
        for kind in TaskKind:
            path = directory / f"{kind.value}_{tier}.txt"
            if not path.exists():
                continue
            templates[(kind, tier)] = PromptTemplate(
                id=tier,
                task_kind=kind,
                body=path.read_text(encoding="utf-8"),
                feature_guidance=guidance,
            )

    if not templates:
        raise TemplateError(f"❌ No templates found in {directory}")
    logger.debug("📄 Loaded %d templates from %s", len(templates), directory)
    return TemplateSet(templates=templates, adversarial_note=note)


@lru_cache(maxsize=1)
def default_adversarial_note() -> str:
    return (TEMPLATE_DIR / ADVERSARIAL_NOTE_FILE).read_text(encoding="utf-8").strip()


# -----------------------------------------------------------
# TOKENS & BUDGET
# -----------------------------------------------------------
def estimate_tokens(text: str, bytes_per_token: float = DEFAULT_BYTES_PER_TOKEN) -> int:
    return math.ceil(len(text.encode("utf-8")) / bytes_per_token)


def bytes_per_token_for(
    model: str, overrides: Mapping[str, float], default: float = DEFAULT_BYTES_PER_TOKEN
) -> float:
    """Exact model id first, then its provider prefix, then the default ratio"""
    if model in overrides:
        return overrides[model]
    return overrides.get(model.split("/", 1)[0], default)


def check_budget(
    p: RenderedPrompt, limit: int, reserved_output_tokens: int = RESERVED_OUTPUT_TOKENS
) -> Optional[BudgetExceeded]:
    """None when the prompt fits, otherwise the numbers that did not"""
    if limit <= 0:
        raise ValueError(f"❌ Token limit must be positive, got {limit}")
    if p.token_estimate + reserved_output_tokens <= limit:
        return None
    return BudgetExceeded(p.token_estimate, reserved_output_tokens, limit)


# -----------------------------------------------------------
# RENDERING HELPERS
# -----------------------------------------------------------
def fence(sample: CodeSample) -> str:
    longest = max((len(run) for run in re.findall(r"`+", sample.text)), default=0)
    ticks = "`" * max(3, longest + 1)
    body = sample.text if sample.text.endswith("\n") else sample.text + "\n"
    return f"{ticks}{sample.language}\n{body}{ticks}"


def _fill(text: str, values: Dict[str, str], names: Sequence[str]) -> str:
    def substitute(match):
        name = match.group(1)
        if name not in names:
            return match.group(0)
        if name not in values:
            raise TemplateError(f"❌ Placeholder {{{name}}} has no value")
        return values[name]

    return PLACEHOLDER.sub(substitute, text)


def _assemble(template: PromptTemplate, values: Dict[str, str]) -> str:
    scaffold = _fill(template.body, values, TEXT_PLACEHOLDERS)
    scaffold = re.sub(r"\n[ \t]*(?:\n[ \t]*)+\n", "\n\n", scaffold).strip()
    text = _fill(scaffold, values, CODE_PLACEHOLDERS)
    return f"{text}\n\n{ANSWER_LINES[template.task_kind]}\n"


def _fingerprint(template: PromptTemplate, samples: Sequence[CodeSample], **extra) -> str:
    payload = {
        "template": f"{template.task_kind.value}_{template.id}",
        "body": hashlib.sha256(template.body.encode("utf-8")).hexdigest(),
        "samples": [
            [s.author, s.sample_id, hashlib.sha256(s.text.encode("utf-8")).hexdigest()]
            for s in samples
        ],
        **extra,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _require_kind(template: PromptTemplate, kind: TaskKind):
    if template.task_kind is not kind:
        raise TemplateError(
            f"❌ Template {template.task_kind.value}_{template.id} cannot render a {kind.value} prompt"
        )


def _labelled(
    groups: Sequence[Tuple[str, Sequence[CodeSample]]], query: CodeSample, seed: int
) -> List[Tuple[str, str, Sequence[CodeSample]]]:
    """Shuffle candidates (seeded) and assign Author 1..k labels"""
    authors = [author for author, _ in groups]
    if len(set(authors)) != len(authors):
        raise TemplateError("❌ Candidate authors must be unique within one prompt")
    salt = f"{seed}:{query.sample_id}:{'|'.join(sorted(authors))}"
    order = list(groups)
    random.Random(salt).shuffle(order)
    return [
        (LABEL_FORMAT.format(index=i), author, refs)
        for i, (author, refs) in enumerate(order, 1)
    ]


def _render_candidates(
    template: PromptTemplate,
    groups: Sequence[Tuple[str, Sequence[CodeSample]]],
    query: CodeSample,
    seed: int,
    bytes_per_token: float,
) -> RenderedPrompt:
    if not groups or any(not refs for _, refs in groups):
        raise TemplateError("❌ Every candidate needs at least one reference sample")

    labelled = _labelled(groups, query, seed)
    blocks = [
        REFERENCE_HEADER.format(label=label, index=j) + "\n" + fence(ref)
        for label, _, refs in labelled
        for j, ref in enumerate(refs, 1)
    ]
    values = {
        "adversarial_note": "",
        "feature_guidance": template.feature_guidance,
        "candidate_list": ", ".join(label for label, _, _ in labelled),
        "references": "\n\n".join(blocks),
        "query_code": QUERY_HEADER + "\n" + fence(query),
    }
    text = _assemble(template, values)
    samples = [ref for _, _, refs in labelled for ref in refs] + [query]
    return RenderedPrompt(
        text=text,
        token_estimate=estimate_tokens(text, bytes_per_token),
        case_fingerprint=_fingerprint(template, samples, seed=seed),
        template_id=template.id,
        task_kind=template.task_kind,
        label_map={label: author for label, author, _ in labelled},
    )


# -----------------------------------------------------------
# PUBLIC RENDERERS
# -----------------------------------------------------------
def render_verification(
    t: PromptTemplate,
    case: VerificationCase,
    adversarial_aware: bool = False,
    adversarial_note: Optional[str] = None,
    bytes_per_token: float = DEFAULT_BYTES_PER_TOKEN,
) -> RenderedPrompt:
    _require_kind(t, TaskKind.VERIFY)
    note = adversarial_note if adversarial_note is not None else default_adversarial_note()
    values = {
        "adversarial_note": note if adversarial_aware else "",
        "feature_guidance": t.feature_guidance,
        "candidate_list": "",
        "code_a": SNIPPET_HEADER.format(index=1) + "\n" + fence(case.left),
        "code_b": SNIPPET_HEADER.format(index=2) + "\n" + fence(case.right),
    }
    text = _assemble(t, values)
    return RenderedPrompt(
        text=text,
        token_estimate=estimate_tokens(text, bytes_per_token),
        case_fingerprint=_fingerprint(t, [case.left, case.right], adversarial_aware=adversarial_aware),
        template_id=t.id,
        task_kind=t.task_kind,
    )


def render_attribution(
    t: PromptTemplate,
    case: AttributionCase,
    seed: int = 0,
    bytes_per_token: float = DEFAULT_BYTES_PER_TOKEN,
) -> RenderedPrompt:
    _require_kind(t, TaskKind.ATTRIBUTE)
    if not case.references:
        raise TemplateError(f"❌ Case {case.case_id} has no references")
    return _render_candidates(t, list(case.references.items()), case.query, seed, bytes_per_token)


def render_tournament(
    t: PromptTemplate,
    subset: Sequence[Tuple[str, Sequence[CodeSample]]],
    query: CodeSample,
    seed: int = 0,
    max_subset_size: int = DEFAULT_MAX_SUBSET_SIZE,
    bytes_per_token: float = DEFAULT_BYTES_PER_TOKEN,
) -> RenderedPrompt:
    _require_kind(t, TaskKind.TOURNAMENT)
    if not 1 <= len(subset) <= max_subset_size:
        raise TemplateError(f"❌ Tournament subset of {len(subset)} authors (allowed 1..{max_subset_size})")
    return _render_candidates(t, subset, query, seed, bytes_per_token)
