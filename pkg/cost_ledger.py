"""
Cost Ledger - price query records and summarize spend per experiment/model

Pricing file: {"<model>": {"input_per_1k": float, "output_per_1k": float}}
A model id missing from the table falls back to its provider prefix
("mock-oracle/eps=0.1/..." -> "mock-oracle").
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Union

import pandas as pd

from llm_backend import QueryRecord

logger = logging.getLogger(__name__)

COST_COLUMNS = ["experiment", "model", "queries", "input_tokens", "output_tokens", "cost"]
COST_DECIMALS = 6


class PricingError(ValueError):
    pass


@dataclass(frozen=True)
class Pricing:
    input_per_1k: float
    output_per_1k: float

    def __post_init__(self):
        if self.input_per_1k < 0 or self.output_per_1k < 0:
            raise PricingError("❌ Prices must be >= 0")

    def price(self, prompt_tokens: int, output_tokens: int) -> float:
        return prompt_tokens / 1000 * self.input_per_1k + output_tokens / 1000 * self.output_per_1k


PricingTable = Mapping[str, Pricing]


def load_pricing(path) -> Dict[str, Pricing]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise PricingError(f"❌ Pricing file not found: {path}")
    except ValueError as e:
        raise PricingError(f"❌ Pricing file {path} is not valid JSON: {e}")

    if not isinstance(raw, dict):
        raise PricingError(f"❌ Pricing file {path} must hold an object keyed by model id")
    table = {}
    for model, entry in raw.items():
        try:
            table[model] = Pricing(float(entry["input_per_1k"]), float(entry["output_per_1k"]))
        except (KeyError, TypeError, ValueError):
            raise PricingError(f"❌ Pricing entry for {model!r} needs numeric input_per_1k and output_per_1k")
    return table


def pricing_for(model: str, pricing: PricingTable) -> Pricing:
    if model in pricing:
        return pricing[model]
    prefix = model.split("/", 1)[0]
    if prefix in pricing:
        return pricing[prefix]
    raise PricingError(f"❌ No pricing for model {model!r}")


def price_callable(pricing: Optional[PricingTable]):
    """(model, prompt_tokens, output_tokens) -> cost, for LLMClient"""
    if not pricing:
        return None
    return lambda model, prompt_tokens, output_tokens: pricing_for(model, pricing).price(
        prompt_tokens, output_tokens
    )


def record_cost(record: QueryRecord, pricing: Optional[PricingTable]) -> float:
    if pricing is None:
        return 0.0
    return pricing_for(record.request.model, pricing).price(
        record.response.prompt_tokens, record.response.output_tokens
    )


# -----------------------------------------------------------
# SUMMARY
# -----------------------------------------------------------
@dataclass(frozen=True)
class CostSummary:
    total_cost: float = 0.0
    input_tokens: int = 0
    output_tokens: int = 0
    query_count: int = 0
    rows: List[dict] = field(default_factory=list)

    def unit_cost(self, n_queries: int) -> Optional[float]:
        """Spend per attributed query (tournament Top-1 unit cost)"""
        if n_queries <= 0:
            return None
        return self.total_cost / n_queries

    def to_dict(self) -> dict:
        return {
            "total_cost": round(self.total_cost, COST_DECIMALS),
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "query_count": self.query_count,
            "rows": [
                {**row, "cost": round(row["cost"], COST_DECIMALS)}
                for row in self.rows
            ],
        }


def _as_record(item: Union[QueryRecord, dict]) -> QueryRecord:
    return item if isinstance(item, QueryRecord) else QueryRecord.from_dict(item)


def cost_of(records: Iterable[Union[QueryRecord, dict]], pricing: Optional[PricingTable]) -> CostSummary:
    """
    Sum per-record input/output cost, grouped by (experiment, model).
    Records are summed in cache-key order so the total does not depend on
    the order in which workers finished.
    """
    records = sorted((_as_record(r) for r in records), key=lambda r: r.cache_key)
    if not records:
        return CostSummary()

    df = pd.DataFrame([
        {
            "experiment": r.experiment,
            "model": r.request.model,
            "input_tokens": r.response.prompt_tokens,
            "output_tokens": r.response.output_tokens,
            "cost": record_cost(r, pricing),
        }
        for r in records
    ])

    grouped = (
        df.groupby(["experiment", "model"], sort=True)
        .agg(
            queries=("cost", "size"),
            input_tokens=("input_tokens", "sum"),
            output_tokens=("output_tokens", "sum"),
            cost=("cost", "sum"),
        )
        .reset_index()
    )
    rows = [
        {
            "experiment": row.experiment,
            "model": row.model,
            "queries": int(row.queries),
            "input_tokens": int(row.input_tokens),
            "output_tokens": int(row.output_tokens),
            "cost": float(row.cost),
        }
        for row in grouped.itertuples(index=False)
    ]

    return CostSummary(
        total_cost=float(df["cost"].sum()),
        input_tokens=int(df["input_tokens"].sum()),
        output_tokens=int(df["output_tokens"].sum()),
        query_count=len(df),
        rows=rows,
    )


def project_cost(
    model: str, prompt_tokens: int, output_tokens: int, pricing: Optional[PricingTable]
) -> Optional[float]:
    """Dry-run estimate; None without a pricing table"""
    if not pricing:
        return None
    return pricing_for(model, pricing).price(prompt_tokens, output_tokens)


def format_cost_summary(summary: CostSummary, unit_queries: int = 0) -> str:
    if summary.query_count == 0:
        return "💰 No paid queries recorded: total $0.00"

    lines = [
        f"💰 Total ${summary.total_cost:.4f} over {summary.query_count} queries "
        f"({summary.input_tokens} input / {summary.output_tokens} output tokens)"
    ]
    for row in summary.rows:
        lines.append(
            f"   • {row['experiment'] or '-'} / {row['model']}: "
            f"{row['queries']} queries, ${row['cost']:.4f}"
        )
    unit = summary.unit_cost(unit_queries)
    if unit is not None:
        lines.append(f"   • Unit cost per attributed query: ${unit:.4f}")
    return "\n".join(lines)
