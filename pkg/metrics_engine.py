"""
Metrics Engine - confusion matrices, accuracy, MCC, tournament round accuracy

Indeterminate answers are always scored as wrong: fn for a positive case,
fp for a negative one.
"""

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from corpus_engine import AttributionCase, Expected
from tournament_engine import TournamentResult, survival_round
from verdict_parser import AttributionKind, AttributionVerdict, Verdict, VerdictValue

ACCURACY_DECIMALS = 1
MCC_DECIMALS = 2


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    def __post_init__(self):
        for name in ("tp", "fn", "tn", "fp"):
            if getattr(self, name) < 0:
                raise ValueError(f"❌ Confusion counter {name} must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    def add(self, outcome: str) -> "ConfusionMatrix":
        return replace(self, **{outcome: getattr(self, outcome) + 1})

    def reconcile(self, n_positive: int, n_negative: int) -> "ConfusionMatrix":
        """
        Fold answers missing from raw counts (indeterminates) into fn and fp
        so that tp + fn == n_positive and tn + fp == n_negative.
        """
        missing_pos = n_positive - self.tp - self.fn
        missing_neg = n_negative - self.tn - self.fp
        if missing_pos < 0 or missing_neg < 0:
            raise ValueError(
                f"❌ Matrix {self.to_dict()} holds more cases than {n_positive} positive / {n_negative} negative"
            )
        return replace(self, fn=self.fn + missing_pos, fp=self.fp + missing_neg)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn, "tn": self.tn, "fp": self.fp}


# -----------------------------------------------------------
# RECORDING
# -----------------------------------------------------------
def verification_outcome(expected: Expected, v: Verdict) -> str:
    if Expected(expected) is Expected.SAME:
        return "tp" if v.value is VerdictValue.SAME else "fn"
    return "tn" if v.value is VerdictValue.DIFFERENT else "fp"


def record_verification(m: ConfusionMatrix, expected: Expected, v: Verdict) -> ConfusionMatrix:
    return m.add(verification_outcome(expected, v))


def attribution_outcome(case: AttributionCase, v: AttributionVerdict) -> str:
    if case.in_distribution:
        correct = v.kind is AttributionKind.CHOSEN and v.author == case.expected
        return "tp" if correct else "fn"
    return "tn" if v.kind is AttributionKind.NONE_OF_THEM else "fp"


def record_attribution(m: ConfusionMatrix, case: AttributionCase, v: AttributionVerdict) -> ConfusionMatrix:
    return m.add(attribution_outcome(case, v))


# -----------------------------------------------------------
# SCORES
# -----------------------------------------------------------
def accuracy(m: ConfusionMatrix) -> Optional[float]:
    if m.total == 0:
        return None
    return (m.tp + m.tn) / m.total


def mcc(m: ConfusionMatrix) -> float:
    denominator = (m.tp + m.fp) * (m.tp + m.fn) * (m.tn + m.fp) * (m.tn + m.fn)
    if denominator == 0:
        return 0.0
    value = (m.tp * m.tn - m.fp * m.fn) / math.sqrt(denominator)
    return max(-1.0, min(1.0, value))


def round_accuracy(
    results: Sequence[TournamentResult],
    truths: Optional[Mapping[str, str]] = None,
    round_index: int = -1,
) -> float:
    """
    Fraction of queries whose true author survived into round_index.
    Negative indices count from each result's final round, so -1 is Top-1.
    """
    if not results:
        raise ValueError("❌ round_accuracy needs at least one result")

    hits = 0
    for result in results:
        truth = truths[result.query_id] if truths is not None else result.true_author
        target = round_index if round_index >= 0 else len(result.rounds) + round_index
        hits += survival_round(result, truth) >= target
    return hits / len(results)


def report_row(m: ConfusionMatrix, **labels) -> dict:
    """Report/CSV row: accuracy in percent to 1 decimal, MCC to 2 decimals"""
    acc = accuracy(m)
    return {
        **labels,
        **m.to_dict(),
        "accuracy": round(acc * 100, ACCURACY_DECIMALS) if acc is not None else None,
        "mcc": round(mcc(m), MCC_DECIMALS) if m.total else None,
    }


def average_row(rows: Sequence[dict], **labels) -> dict:
    """Mean of already-reported accuracy and MCC values (the per-model average over template tiers)"""
    accuracies = [r["accuracy"] for r in rows if r.get("accuracy") is not None]
    mccs = [r["mcc"] for r in rows if r.get("mcc") is not None]
    return {
        **labels,
        "accuracy": round(sum(accuracies) / len(accuracies), ACCURACY_DECIMALS) if accuracies else None,
        "mcc": round(sum(mccs) / len(mccs), MCC_DECIMALS) if mccs else None,
    }
