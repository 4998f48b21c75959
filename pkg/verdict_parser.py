"""
Verdict Parser - turn free-form LLM replies into typed decisions.

Precedence: the last `ANSWER: <token>` line, then keyword heuristics,
then Indeterminate. Both parsers are total.
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

logger = logging.getLogger(__name__)

ANSWER_LINE = re.compile(r"\banswer\s*:[ \t]*([^\n]*)", re.IGNORECASE)
LABEL_TOKEN = re.compile(r"^author\s*#?\s*(\d+)\b")
LABEL_MENTION = re.compile(r"\bauthor\s*#?\s*(\d+)\b", re.IGNORECASE)

SAME_TOKENS = {"yes", "same"}
DIFFERENT_TOKENS = {"no", "different"}
NONE_TOKENS = {"none", "none of them", "none of the above", "none of the candidates"}

UNSURE_WORDS = re.compile(r"\b(?:unsure|not sure|uncertain|cannot determine|can't determine|cannot tell|can't tell)\b")
NEGATED_SAME = re.compile(r"\bnot (?:written by |by )?the same author\b")
SAME_WORDS = re.compile(r"\byes\b|\bsame author\b")
DIFFERENT_WORDS = re.compile(r"\bno\b|\bdifferent authors?\b")
NONE_WORDS = re.compile(r"\bnone of\b")


class VerdictValue(str, Enum):
    SAME = "same"
    DIFFERENT = "different"
    INDETERMINATE = "indeterminate"


class AttributionKind(str, Enum):
    CHOSEN = "chosen"
    NONE_OF_THEM = "none"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class Verdict:
    value: VerdictValue
    raw_text: str
    parse_warnings: int = 0


@dataclass(frozen=True)
class AttributionVerdict:
    kind: AttributionKind
    raw_text: str
    author: Optional[str] = None
    parse_warnings: int = 0

    @property
    def label(self) -> str:
        """Author id, "none" or "indeterminate" for reports"""
        return self.author if self.kind is AttributionKind.CHOSEN else self.kind.value


def _answer_tokens(text: str):
    cleaned = text.replace("*", "").replace("`", "")
    return ANSWER_LINE.findall(cleaned)


def _clean(token: str) -> str:
    token = token.strip().strip("\"'.,;:!()[]<> ").lower()
    return " ".join(token.split())


def _warnings(tokens) -> int:
    if len(tokens) > 1:
        logger.warning("⚠️ Reply carries %d ANSWER lines; the last one wins", len(tokens))
        return 1
    return 0


# -----------------------------------------------------------
# VERIFICATION
# -----------------------------------------------------------
def parse_verification(text: str) -> Verdict:
    text = text or ""
    tokens = _answer_tokens(text)
    if tokens:
        token = _clean(tokens[-1])
        word = _clean(token.split()[0]) if token else ""
        if word in SAME_TOKENS:
            value = VerdictValue.SAME
        elif word in DIFFERENT_TOKENS:
            value = VerdictValue.DIFFERENT
        else:
            value = VerdictValue.INDETERMINATE
        return Verdict(value, text, _warnings(tokens))

    return Verdict(_keyword_verdict(text), text)


def _keyword_verdict(text: str) -> VerdictValue:
    lowered = NEGATED_SAME.sub("different author", text.lower())
    if UNSURE_WORDS.search(lowered):
        return VerdictValue.INDETERMINATE
    same = bool(SAME_WORDS.search(lowered))
    different = bool(DIFFERENT_WORDS.search(lowered))
    if same and not different:
        return VerdictValue.SAME
    if different and not same:
        return VerdictValue.DIFFERENT
    return VerdictValue.INDETERMINATE


# -----------------------------------------------------------
# ATTRIBUTION
# -----------------------------------------------------------
def parse_attribution(text: str, label_map: Dict[str, str]) -> AttributionVerdict:
    text = text or ""
    lookup = {_clean(label): author for label, author in label_map.items()}
    ids = {author.lower(): author for author in label_map.values()}

    tokens = _answer_tokens(text)
    if tokens:
        kind, author = _resolve(_clean(tokens[-1]), lookup, ids)
        return AttributionVerdict(kind, text, author, _warnings(tokens))

    labels = {f"author {int(number)}" for number in LABEL_MENTION.findall(text)}
    mentioned = {lookup[label] for label in labels if label in lookup}
    none_said = bool(NONE_WORDS.search(text.lower()))
    if len(mentioned) == 1 and not none_said:
        return AttributionVerdict(AttributionKind.CHOSEN, text, mentioned.pop())
    if none_said and not mentioned:
        return AttributionVerdict(AttributionKind.NONE_OF_THEM, text)
    return AttributionVerdict(AttributionKind.INDETERMINATE, text)


def _resolve(token: str, lookup: Dict[str, str], ids: Dict[str, str]):
    if token in NONE_TOKENS:
        return AttributionKind.NONE_OF_THEM, None
    if token in ids:
        return AttributionKind.CHOSEN, ids[token]
    if token.isdigit():
        token = f"author {token}"
    if len({int(n) for n in LABEL_MENTION.findall(token)}) > 1:
        return AttributionKind.INDETERMINATE, None
    match = LABEL_TOKEN.match(token)
    if match:
        author = lookup.get(f"author {int(match.group(1))}")
        if author is not None:
            return AttributionKind.CHOSEN, author
    return AttributionKind.INDETERMINATE, None
