"""
Experiment Runner - verification, attribution, tournament and robustness runs

Each run samples its cases from the configured corpus, renders prompts,
dispatches them through the cache-first client, parses and scores the
replies and writes the run directory (see storage/run_store.py).

report.json is a pure function of corpus and config: wall-clock and cache
statistics go to run_info.json instead.
"""

import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from cache_engine import QueryLog, ResponseCache, resolve_cache_dir
from corpus_engine import (
    Corpus,
    Expected,
    PairingError,
    VerificationCase,
    build_adversarial_cases,
    filter_corpus,
    load_corpus,
    load_pairing,
    sample_attribution_cases,
    sample_tournament_queries,
    sample_verification_cases,
)
from cost_ledger import (
    COST_COLUMNS,
    PricingTable,
    cost_of,
    format_cost_summary,
    load_pricing,
    price_callable,
    pricing_for,
    project_cost,
)
from experiment_config import ExperimentConfig, ExperimentKind
from llm_backend import (
    BackendError,
    BackendUnavailable,
    HttpBackend,
    LLMClient,
    ProtocolError,
    RequestRejected,
    cache_key,
)
from metrics_engine import (
    ConfusionMatrix,
    attribution_outcome,
    average_row,
    report_row,
    round_accuracy,
    verification_outcome,
)
from prompt_engine import (
    DEFAULT_BYTES_PER_TOKEN,
    TEMPLATE_DIR,
    RenderedPrompt,
    TaskKind,
    TemplateSet,
    bytes_per_token_for,
    check_budget,
    load_templates,
    render_attribution,
    render_verification,
)
from storage import RunStore
from style_oracle import MockBackend, StyleOracle
from tournament_engine import (
    TournamentConfig,
    TournamentResult,
    run_tournament,
    subset_query_count,
    survival_round,
    survivor_chain,
)
from verdict_parser import (
    AttributionKind,
    AttributionVerdict,
    Verdict,
    VerdictValue,
    parse_attribution,
    parse_verification,
)

logger = logging.getLogger(__name__)

OUTCOMES = ("tp", "fn", "tn", "fp")
DISTRIBUTION_ORDER = {"all": 0, "in": 1, "out": 2}
ROUND_COLUMNS = ["query_id", "true_author", "survival_round", "winner", "correct"]
METRIC_COLUMNS = ["experiment", "model", "template", "tp", "fn", "tn", "fp", "accuracy", "mcc"]
REUSED_CASES_NOTE = "The same case set is scored under every template tier."
AVERAGE_TEMPLATE = "average"


class RunAborted(Exception):
    """Backend failures stopped the run; the partial report is on disk"""

    def __init__(self, message: str, report: "Report"):
        super().__init__(message)
        self.report = report


@dataclass
class Report:
    experiment: str
    kind: str
    model: str
    config: dict
    rows: List[dict] = field(default_factory=list)
    metrics: List[dict] = field(default_factory=list)
    round_accuracy: List[dict] = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    incomplete: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


@dataclass
class RunContext:
    cfg: ExperimentConfig
    store: RunStore
    client: LLMClient
    templates: TemplateSet
    pricing: Optional[PricingTable] = None
    bytes_per_token: float = DEFAULT_BYTES_PER_TOKEN
    started: float = field(default_factory=time.monotonic)


@dataclass(frozen=True)
class Outcome:
    text: str = ""
    key: Optional[str] = None
    annotation: str = ""  # "", budget, unavailable, rejected, protocol, aborted


# -----------------------------------------------------------
# SETUP
# -----------------------------------------------------------
def make_oracle(cfg: ExperimentConfig) -> StyleOracle:
    b = cfg.backend
    return StyleOracle(epsilon=b.epsilon, seed=cfg.seed, threshold=b.threshold, unsure_rate=b.unsure_rate)


def make_backend(cfg: ExperimentConfig):
    b = cfg.backend
    if b.kind == "mock":
        return MockBackend(make_oracle(cfg))
    return HttpBackend(
        provider=b.provider,
        base_url=b.base_url,
        timeout=b.timeout,
        max_retries=b.max_retries,
        seed=cfg.seed,
    )


def model_id(cfg: ExperimentConfig) -> str:
    return cfg.backend.model if cfg.backend.kind == "http" else make_oracle(cfg).model_id


def token_ratio(cfg: ExperimentConfig) -> float:
    """Bytes per token used to estimate prompt size for the configured model"""
    b = cfg.backend
    return bytes_per_token_for(model_id(cfg), b.bytes_per_token_overrides, b.bytes_per_token)


def build_context(cfg: ExperimentConfig, backend=None) -> RunContext:
    store = RunStore(cfg.output_dir, cfg.id)
    pricing = load_pricing(cfg.pricing) if cfg.pricing else None
    backend = backend or make_backend(cfg)
    b = cfg.backend

    client = LLMClient(
        backend,
        model=b.model if b.kind == "http" else None,
        cache=ResponseCache(resolve_cache_dir(store.default_cache_dir)),
        query_log=QueryLog(store.query_log_path),
        experiment=cfg.id,
        temperature=b.temperature,
        top_p=b.top_p,
        max_output_tokens=b.max_output_tokens,
        system_text=b.system_text,
        max_in_flight=b.max_in_flight,
        price=price_callable(pricing),
    )
    if pricing is not None:
        pricing_for(client.model, pricing)

    return RunContext(
        cfg=cfg,
        store=store,
        client=client,
        templates=load_templates(cfg.template_dir or TEMPLATE_DIR),
        pricing=pricing,
        bytes_per_token=token_ratio(cfg),
    )


def load_filtered_corpus(cfg: ExperimentConfig) -> Corpus:
    return filter_corpus(load_corpus(cfg.corpus.root, cfg.corpus.layout), cfg.filter)


# -----------------------------------------------------------
# DISPATCH
# -----------------------------------------------------------
def _annotation(error: BackendError) -> str:
    if isinstance(error, RequestRejected):
        return "rejected"
    if isinstance(error, ProtocolError):
        return "protocol"
    return "unavailable"


def _budget_ok(ctx: RunContext, p: RenderedPrompt) -> bool:
    b = ctx.cfg.backend
    over = check_budget(p, b.token_limit, b.reserved_output_tokens)
    if over is not None:
        logger.warning("⚠️ Prompt over budget, scored indeterminate: %s", over.message)
        return False
    return True


def dispatch(ctx: RunContext, prompts: Sequence[Optional[RenderedPrompt]]) -> Tuple[List[Outcome], bool]:
    """
    Complete every prompt (None = budget-rejected, never sent). Work goes
    out in batches of max_in_flight; once max_consecutive_failures cases
    in a row have failed, the remaining cases are marked aborted.
    """
    b = ctx.cfg.backend
    outcomes: List[Optional[Outcome]] = [None] * len(prompts)
    pending = []
    for i, p in enumerate(prompts):
        if p is None:
            outcomes[i] = Outcome(annotation="budget")
        else:
            pending.append(i)

    def ask(i: int) -> Outcome:
        request = ctx.client.request(prompts[i].text)
        try:
            return Outcome(ctx.client.complete(request).text, cache_key(request))
        except (BackendUnavailable, RequestRejected, ProtocolError) as e:
            logger.warning("⚠️ Case %d failed, scored indeterminate: %s", i + 1, e)
            return Outcome(annotation=_annotation(e))

    streak, aborted = 0, False
    with ThreadPoolExecutor(max_workers=b.max_in_flight) as executor:
        for start in range(0, len(pending), b.max_in_flight):
            batch = pending[start:start + b.max_in_flight]
            if aborted:
                for i in batch:
                    outcomes[i] = Outcome(annotation="aborted")
                continue
            for i, outcome in zip(batch, executor.map(ask, batch)):
                outcomes[i] = outcome
                streak = streak + 1 if outcome.annotation else 0
                if streak >= b.max_consecutive_failures and not aborted:
                    aborted = True
                    logger.error("❌ %d consecutive backend failures, stopping dispatch", streak)
    return outcomes, aborted


# -----------------------------------------------------------
# SCORING HELPERS
# -----------------------------------------------------------
def _metric_rows(rows: List[dict], by: Sequence[str], **labels) -> List[dict]:
    groups: Dict[tuple, List[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in by), []).append(row)

    result = []
    for key, members in groups.items():
        counts = Counter(r["outcome"] for r in members)
        m = ConfusionMatrix(**{o: counts[o] for o in OUTCOMES})
        result.append(report_row(
            m,
            **labels,
            **dict(zip(by, key)),
            cases=len(members),
            indeterminate=sum(1 for r in members if r["verdict"] == "indeterminate"),
            budget_rejected=sum(1 for r in members if r["annotation"] == "budget"),
        ))
    return result


def _average_rows(metrics: List[dict], by: Sequence[str] = ()) -> List[dict]:
    """One average row per model and label group once more than one template tier ran"""
    if len({m["template"] for m in metrics}) < 2:
        return []
    groups: Dict[tuple, List[dict]] = {}
    for m in metrics:
        groups.setdefault((m["experiment"], m["model"], *(m[k] for k in by)), []).append(m)
    return [
        average_row(members, experiment=key[0], model=key[1], template=AVERAGE_TEMPLATE, **dict(zip(by, key[2:])))
        for key, members in groups.items()
    ]


def _metric_columns(*labels: str) -> List[str]:
    return METRIC_COLUMNS[:3] + list(labels) + METRIC_COLUMNS[3:] + ["cases", "indeterminate", "budget_rejected"]


def _counters(rows: List[dict], **extra) -> dict:
    annotations = Counter(r["annotation"] for r in rows if r["annotation"])
    return {
        "cases": len(rows),
        "parse_warnings": sum(r.get("parse_warnings", 0) for r in rows),
        "indeterminate": sum(1 for r in rows if r.get("verdict") == "indeterminate"),
        "annotations": dict(sorted(annotations.items())),
        **extra,
    }


def _cost_section(ctx: RunContext, keys: Sequence[str], unit_queries: int = 0) -> dict:
    """
    Price the queries this report references from the run's own query
    log. Keys missing from it were answered from a cache another run paid
    for and count as $0 replays.
    """
    paid: Dict[str, dict] = {}
    for record in ctx.store.read_query_log():
        if record.get("experiment") == ctx.cfg.id:
            paid.setdefault(record["cache_key"], record)

    referenced = sorted(set(k for k in keys if k))
    records = [paid[k] for k in referenced if k in paid]
    summary = cost_of(records, ctx.pricing)
    section = {
        **summary.to_dict(),
        "priced": ctx.pricing is not None,
        "cache_replays": len(referenced) - len(records),
    }
    if unit_queries:
        unit = summary.unit_cost(unit_queries)
        section["unit_cost"] = round(unit, 6) if unit is not None else None
    return section


def _config_echo(cfg: ExperimentConfig) -> dict:
    return {"text": cfg.source_text, "backend_override": cfg.backend_override}


def _notes(cfg: ExperimentConfig) -> List[str]:
    return [REUSED_CASES_NOTE] if len(cfg.templates) > 1 else []


def _finish(ctx: RunContext, report: Report, tables: Dict[str, Tuple[List[dict], Optional[List[str]]]]) -> Report:
    store = ctx.store
    store.write_report(report.to_dict())
    for name, (rows, columns) in tables.items():
        store.write_table(name, rows, columns)
    store.write_table("cost", report.cost.get("rows", []), COST_COLUMNS)
    store.write_run_info({
        "experiment": report.experiment,
        "wall_clock_seconds": round(time.monotonic() - ctx.started, 3),
        "cache_hits": ctx.client.cache_hits,
        "backend_calls": ctx.client.backend_calls,
        "incomplete": report.incomplete,
    })
    if report.incomplete:
        raise RunAborted(f"❌ Run {report.experiment} aborted; partial report at {store.report_path}", report)
    return report


# -----------------------------------------------------------
# VERIFICATION
# -----------------------------------------------------------
def _verification_rows(
    ctx: RunContext, cases: Sequence[VerificationCase], tier: str, aware: bool
) -> Tuple[List[dict], bool]:
    template = ctx.templates.get(TaskKind.VERIFY, tier)
    prompts = []
    for case in cases:
        p = render_verification(template, case, aware, ctx.templates.adversarial_note, ctx.bytes_per_token)
        prompts.append(p if _budget_ok(ctx, p) else None)

    outcomes, aborted = dispatch(ctx, prompts)

    rows = []
    for case, outcome in zip(cases, outcomes):
        if outcome.annotation:
            verdict = Verdict(VerdictValue.INDETERMINATE, "")
        else:
            verdict = parse_verification(outcome.text)
        rows.append({
            "case_id": case.case_id,
            "template": tier,
            "adversarial_aware": aware,
            "setting": case.setting,
            "left": case.left.sample_id,
            "right": case.right.sample_id,
            "left_author": case.left.author,
            "right_author": case.right.author,
            "expected": case.expected.value,
            "verdict": verdict.value.value,
            "outcome": verification_outcome(case.expected, verdict),
            "parse_warnings": verdict.parse_warnings,
            "annotation": outcome.annotation,
            "query_key": outcome.key,
        })
    return rows, aborted


def run_verification(cfg: ExperimentConfig, backend=None, ctx: Optional[RunContext] = None) -> Report:
    ctx = ctx or build_context(cfg, backend)
    cases = sample_verification_cases(load_filtered_corpus(cfg), cfg.cases.n_same, cfg.cases.n_diff, cfg.seed)
    logger.info("🔍 Verification: %d cases x %d template(s)", len(cases), len(cfg.templates))

    rows, incomplete = [], False
    for tier in cfg.templates:
        tier_rows, aborted = _verification_rows(ctx, cases, tier, cfg.adversarial_aware)
        rows.extend(tier_rows)
        if aborted:
            incomplete = True
            break

    labels = {"experiment": cfg.id, "model": ctx.client.model}
    metrics = _metric_rows(rows, ["template"], **labels)
    metrics += _average_rows(metrics)
    report = Report(
        experiment=cfg.id,
        kind=cfg.kind.value,
        model=ctx.client.model,
        config=_config_echo(cfg),
        rows=rows,
        metrics=metrics,
        counters=_counters(rows),
        cost=_cost_section(ctx, [r["query_key"] for r in rows]),
        notes=_notes(cfg),
        incomplete=incomplete,
    )
    return _finish(ctx, report, {"cases": (rows, None), "metrics": (report.metrics, _metric_columns())})


# -----------------------------------------------------------
# ATTRIBUTION
# -----------------------------------------------------------
def run_attribution(cfg: ExperimentConfig, backend=None, ctx: Optional[RunContext] = None) -> Report:
    ctx = ctx or build_context(cfg, backend)
    corpus = load_filtered_corpus(cfg)
    c = cfg.cases

    blocks = [
        (k, n, sample_attribution_cases(corpus, k, n, c.n_in, c.n_out, cfg.seed))
        for k in c.k
        for n in c.shots
    ]

    rows, incomplete = [], False
    for tier in cfg.templates:
        template = ctx.templates.get(TaskKind.ATTRIBUTE, tier)
        for k, n, cases in blocks:
            prompts = []
            for case in cases:
                p = render_attribution(template, case, seed=cfg.seed, bytes_per_token=ctx.bytes_per_token)
                prompts.append(p if _budget_ok(ctx, p) else None)
            outcomes, aborted = dispatch(ctx, prompts)

            for case, p, outcome in zip(cases, prompts, outcomes):
                if outcome.annotation:
                    verdict = AttributionVerdict(AttributionKind.INDETERMINATE, "")
                else:
                    verdict = parse_attribution(outcome.text, p.label_map)
                rows.append({
                    "case_id": case.case_id,
                    "template": tier,
                    "k": k,
                    "shots": n,
                    "distribution": "in" if case.in_distribution else "out",
                    "query": case.query.sample_id,
                    "query_author": case.query.author,
                    "expected": case.expected or "none",
                    "verdict": verdict.label,
                    "outcome": attribution_outcome(case, verdict),
                    "parse_warnings": verdict.parse_warnings,
                    "annotation": outcome.annotation,
                    "query_key": outcome.key,
                })
            logger.info("📊 Attribution %s k=%d n=%d: %d cases", tier, k, n, len(cases))
            if aborted:
                incomplete = True
                break
        if incomplete:
            break

    labels = {"experiment": cfg.id, "model": ctx.client.model}
    metrics = _metric_rows(rows, ["template", "k", "shots"], **labels, distribution="all")
    metrics += _metric_rows(rows, ["template", "k", "shots", "distribution"], **labels)
    metrics.sort(key=lambda r: (r["template"], r["k"], r["shots"], DISTRIBUTION_ORDER[r["distribution"]]))
    metrics += _average_rows(metrics, ["k", "shots", "distribution"])

    report = Report(
        experiment=cfg.id,
        kind=cfg.kind.value,
        model=ctx.client.model,
        config=_config_echo(cfg),
        rows=rows,
        metrics=metrics,
        counters=_counters(rows),
        cost=_cost_section(ctx, [r["query_key"] for r in rows]),
        notes=_notes(cfg),
        incomplete=incomplete,
    )
    return _finish(ctx, report, {"cases": (rows, None), "metrics": (metrics, _metric_columns("k", "shots", "distribution"))})


# -----------------------------------------------------------
# TOURNAMENT
# -----------------------------------------------------------
def tournament_config(cfg: ExperimentConfig) -> TournamentConfig:
    t, b = cfg.tournament, cfg.backend
    return TournamentConfig(
        subset_size=t.subset_size,
        shots_per_author=t.shots_per_author,
        template=t.template,
        seed=cfg.seed,
        token_limit=b.token_limit,
        reserved_output_tokens=b.reserved_output_tokens,
        max_in_flight=b.max_in_flight,
        bytes_per_token=token_ratio(cfg),
    )


def _tournament_report(ctx: RunContext, results: List[TournamentResult], incomplete: bool) -> Report:
    cfg = ctx.cfg
    rows = []
    for r in results:
        reached = survival_round(r)
        rows.append({
            "query_id": r.query_id,
            "true_author": r.true_author,
            "survival_round": reached,
            "winner": r.winner,
            "correct": r.winner == r.true_author,
            "forced_wins": r.forced_wins,
            "queries": r.query_count,
        })

    rounds = []
    if results:
        chain = [len(s) for s in results[0].rounds]
        for i in range(1, len(chain)):
            rounds.append({
                "round": i,
                "survivors": chain[i],
                "accuracy": round(round_accuracy(results, round_index=i) * 100, 1),
            })

    top1 = round(sum(r["correct"] for r in rows) / len(rows) * 100, 1) if rows else None
    metrics = [{
        "experiment": cfg.id,
        "model": ctx.client.model,
        "template": cfg.tournament.template,
        "queries": len(rows),
        "top1": top1,
    }]
    keys = [k for r in results for k in r.query_keys]
    return Report(
        experiment=cfg.id,
        kind=cfg.kind.value,
        model=ctx.client.model,
        config=_config_echo(cfg),
        rows=rows,
        metrics=metrics,
        round_accuracy=rounds,
        counters={
            "queries": len(rows),
            "forced_wins": sum(r["forced_wins"] for r in rows),
            "subset_queries": sum(r["queries"] for r in rows),
        },
        cost=_cost_section(ctx, keys, unit_queries=len(rows)),
        incomplete=incomplete,
    )


def run_tournament_experiment(
    cfg: ExperimentConfig, backend=None, resume: bool = False, ctx: Optional[RunContext] = None
) -> Report:
    ctx = ctx or build_context(cfg, backend)
    tset = sample_tournament_queries(
        load_filtered_corpus(cfg), cfg.tournament.shots_per_author, cfg.cases.n_queries, cfg.seed
    )
    pool = list(tset.references)
    tcfg = tournament_config(cfg)
    template = ctx.templates.get(TaskKind.TOURNAMENT, tcfg.template)
    logger.info(
        "🏁 Tournament: %d queries over %d authors, survivor chain %s",
        len(tset.queries), len(pool), survivor_chain(len(pool), tcfg.subset_size),
    )

    saved_results = ctx.store.list_tournament_results() if resume else {}
    results: List[TournamentResult] = []
    for i, query in enumerate(tset.queries, 1):
        saved = saved_results.get(query.sample_id)
        if saved is not None:
            results.append(TournamentResult.from_dict(saved))
            continue

        try:
            result = run_tournament(query, pool, tset.references, tcfg, ctx.client, template)
        except BackendError as e:
            logger.error("❌ Tournament stopped at query %d/%d: %s", i, len(tset.queries), e)
            report = _tournament_report(ctx, results, incomplete=True)
            return _finish(ctx, report, _tournament_tables(report))

        ctx.store.save_tournament(result.to_dict())
        results.append(result)
        if i % 25 == 0:
            logger.info("🏆 %d/%d tournament queries done", i, len(tset.queries))

    report = _tournament_report(ctx, results, incomplete=False)
    return _finish(ctx, report, _tournament_tables(report))


def _tournament_tables(report: Report) -> dict:
    return {
        "cases": (report.rows, None),
        "rounds": ([{k: r[k] for k in ROUND_COLUMNS} for r in report.rows], ROUND_COLUMNS),
        "metrics": (report.metrics, None),
    }


# -----------------------------------------------------------
# ROBUSTNESS
# -----------------------------------------------------------
def build_robustness_cases(cfg: ExperimentConfig) -> List[VerificationCase]:
    originals = load_filtered_corpus(cfg)
    transformed = load_corpus(cfg.corpus.transformed_root, cfg.corpus.transformed_layout)
    cases = build_adversarial_cases(originals, transformed, load_pairing(cfg.corpus.pairing), cfg.seed)

    for case in cases:
        wanted = Expected.SAME if case.setting == "evasion" else Expected.DIFFERENT
        if case.expected is not wanted:
            raise PairingError(f"❌ {case.case_id}: {case.setting} pair labelled {case.expected.value}")
    return cases


def run_robustness(cfg: ExperimentConfig, backend=None, ctx: Optional[RunContext] = None) -> Report:
    ctx = ctx or build_context(cfg, backend)
    cases = build_robustness_cases(cfg)
    logger.info("🛡️ Robustness: %d adversarial pairs", len(cases))

    rows, incomplete = [], False
    for tier in cfg.templates:
        for aware in (False, True):
            tier_rows, aborted = _verification_rows(ctx, cases, tier, aware)
            rows.extend(tier_rows)
            if aborted:
                incomplete = True
                break
        if incomplete:
            break

    labels = {"experiment": cfg.id, "model": ctx.client.model}
    metrics = _metric_rows(rows, ["template", "adversarial_aware"], **labels, setting="all")
    metrics += _metric_rows(rows, ["template", "adversarial_aware", "setting"], **labels)
    metrics.sort(key=lambda r: (r["template"], r["adversarial_aware"], r["setting"] != "all", r["setting"]))
    metrics += _average_rows(metrics, ["adversarial_aware", "setting"])

    report = Report(
        experiment=cfg.id,
        kind=cfg.kind.value,
        model=ctx.client.model,
        config=_config_echo(cfg),
        rows=rows,
        metrics=metrics,
        counters=_counters(rows),
        cost=_cost_section(ctx, [r["query_key"] for r in rows]),
        notes=_notes(cfg) + ["Both prompt variants score the same adversarial case set."],
        incomplete=incomplete,
    )
    return _finish(ctx, report, {"cases": (rows, None), "metrics": (metrics, _metric_columns("adversarial_aware", "setting"))})


# -----------------------------------------------------------
# ENTRY POINTS
# -----------------------------------------------------------
RUNNERS = {
    ExperimentKind.VERIFICATION: run_verification,
    ExperimentKind.ATTRIBUTION: run_attribution,
    ExperimentKind.ROBUSTNESS: run_robustness,
}


def run_experiment(cfg: ExperimentConfig, backend=None, resume: bool = False) -> Report:
    if cfg.kind is ExperimentKind.TOURNAMENT:
        return run_tournament_experiment(cfg, backend, resume=resume)
    return RUNNERS[cfg.kind](cfg, backend)


def run_report(cfg: ExperimentConfig) -> Tuple[dict, str]:
    """Cost summary straight from the run's query log, plus stored metrics"""
    store = RunStore(cfg.output_dir, cfg.id)
    pricing = load_pricing(cfg.pricing) if cfg.pricing else None
    records = QueryLog(store.query_log_path).read()
    summary = cost_of(records, pricing)

    stored = store.read_report()
    unit_queries = len(stored["rows"]) if stored and stored["kind"] == "tournament" else 0
    lines = []
    if stored:
        lines.append(format_report(stored))
    lines.append(format_cost_summary(summary, unit_queries))
    if pricing is None:
        lines.append("⚠️ No pricing table configured; costs shown as $0")
    return summary.to_dict(), "\n".join(lines)


def format_report(report: dict) -> str:
    lines = [f"📋 {report['experiment']} ({report['kind']}, {report['model']})"]
    if report.get("incomplete"):
        lines.append("⚠️ INCOMPLETE: run aborted after repeated backend failures")
    for row in report.get("metrics", []):
        labels = ", ".join(
            f"{k}={row[k]}" for k in ("template", "k", "shots", "distribution", "adversarial_aware", "setting")
            if k in row
        )
        if "top1" in row:
            lines.append(f"   • Top-1 {row['top1']}% over {row['queries']} queries")
        else:
            lines.append(f"   • {labels}: accuracy {row['accuracy']}%, MCC {row['mcc']}")
    for r in report.get("round_accuracy", []):
        lines.append(f"   • Round {r['round']} ({r['survivors']} survivors): {r['accuracy']}%")
    for note in report.get("notes", []):
        lines.append(f"   ℹ️ {note}")
    return "\n".join(lines)


# -----------------------------------------------------------
# DRY RUN
# -----------------------------------------------------------
def plan_experiment(cfg: ExperimentConfig) -> dict:
    """Render and budget-check every prompt without dispatching anything"""
    b = cfg.backend
    pricing = load_pricing(cfg.pricing) if cfg.pricing else None
    templates = load_templates(cfg.template_dir or TEMPLATE_DIR)
    model = model_id(cfg)
    corpus = load_filtered_corpus(cfg)
    ratio = token_ratio(cfg)

    if cfg.kind is ExperimentKind.TOURNAMENT:
        tset = sample_tournament_queries(corpus, cfg.tournament.shots_per_author, cfg.cases.n_queries, cfg.seed)
        n = len(tset.references)
        per_query = subset_query_count(n, cfg.tournament.subset_size)
        return {
            "experiment": cfg.id,
            "model": model,
            "pool": n,
            "queries": len(tset.queries),
            "survivor_chain": survivor_chain(n, cfg.tournament.subset_size),
            "subset_queries": per_query * len(tset.queries),
        }

    prompts: List[RenderedPrompt] = []
    if cfg.kind is ExperimentKind.ATTRIBUTION:
        for k in cfg.cases.k:
            for n in cfg.cases.shots:
                cases = sample_attribution_cases(corpus, k, n, cfg.cases.n_in, cfg.cases.n_out, cfg.seed)
                for tier in cfg.templates:
                    template = templates.get(TaskKind.ATTRIBUTE, tier)
                    prompts += [render_attribution(template, c, cfg.seed, ratio) for c in cases]
    else:
        if cfg.kind is ExperimentKind.ROBUSTNESS:
            cases, variants = build_robustness_cases(cfg), (False, True)
        else:
            cases = sample_verification_cases(corpus, cfg.cases.n_same, cfg.cases.n_diff, cfg.seed)
            variants = (cfg.adversarial_aware,)
        for tier in cfg.templates:
            template = templates.get(TaskKind.VERIFY, tier)
            for aware in variants:
                prompts += [
                    render_verification(template, c, aware, templates.adversarial_note, ratio)
                    for c in cases
                ]

    fitting = [p for p in prompts if check_budget(p, b.token_limit, b.reserved_output_tokens) is None]
    input_tokens = sum(p.token_estimate for p in fitting)
    output_tokens = len(fitting) * b.reserved_output_tokens
    return {
        "experiment": cfg.id,
        "model": model,
        "prompts": len(prompts),
        "budget_rejected": len(prompts) - len(fitting),
        "input_tokens": input_tokens,
        "output_tokens": output_tokens,
        "projected_cost": project_cost(model, input_tokens, output_tokens, pricing),
    }
