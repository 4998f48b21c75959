"""End-to-end experiment runs against the stylometric mock backend"""

import json
import threading
from dataclasses import replace

import pytest

from cache_engine import read_query_log
from experiment_config import load_config, parse_config
from experiment_runner import (
    RunAborted,
    format_report,
    make_backend,
    plan_experiment,
    run_attribution,
    run_report,
    run_robustness,
    run_tournament_experiment,
    run_verification,
)
from llm_backend import BackendUnavailable
from storage import RunStore
from tournament_engine import TournamentBudgetError

VERIFY = """
[experiment]
id = "verify-test"
kind = "verification"
seed = 7
{experiment_extra}

[corpus]
root = '{root}'

[cases]
n_same = {n_same}
n_diff = {n_diff}

[backend]
kind = "mock"
{backend_extra}
"""

ATTRIBUTE = """
[experiment]
id = "attribute-test"
kind = "attribution"
seed = 11

[corpus]
root = '{root}'

[cases]
k = {k}
shots = {shots}
n_in = {n_in}
n_out = {n_out}

[backend]
kind = "mock"
{backend_extra}
"""

TOURNAMENT = """
[experiment]
id = "tournament-test"
kind = "tournament"
seed = 3
{experiment_extra}

[corpus]
root = '{root}'

[cases]
n_queries = {n_queries}

[backend]
kind = "mock"
{backend_extra}
"""

ROBUSTNESS = """
[experiment]
id = "robustness-test"
kind = "robustness"
seed = 5

[corpus]
root = '{root}'
transformed_root = '{transformed}'
transformed_layout = "manifest"
pairing = '{pairing}'

[backend]
kind = "mock"
"""


def write_config(directory, template, **values):
    directory.mkdir(parents=True, exist_ok=True)
    values.setdefault("experiment_extra", "")
    values.setdefault("backend_extra", "")
    path = directory / "exp.toml"
    path.write_text(template.format(**values), encoding="utf-8")
    return path


def verify_config(directory, root, n_same=30, n_diff=30, **extra):
    return load_config(write_config(directory, VERIFY, root=root, n_same=n_same, n_diff=n_diff, **extra))


class FlakyBackend:
    """Delegates to a real backend, then fails every call after the first `fail_after`"""

    def __init__(self, inner, fail_after):
        self.inner = inner
        self.model_id = inner.model_id
        self.fail_after = fail_after
        self.calls = 0
        self._lock = threading.Lock()

    def invoke(self, request):
        with self._lock:
            self.calls += 1
            n = self.calls
        if n > self.fail_after:
            raise BackendUnavailable("❌ simulated outage")
        return self.inner.invoke(request)


def write_pricing(directory):
    path = directory / "pricing.json"
    path.write_text(json.dumps({"mock-oracle": {"input_per_1k": 0.005, "output_per_1k": 0.015}}))
    return path


# -----------------------------------------------------------
# VERIFICATION
# -----------------------------------------------------------
def test_perfect_oracle_verification(tmp_path, corpus_dir):
    cfg = verify_config(tmp_path / "exp", corpus_dir)
    report = run_verification(cfg)

    [m] = report.metrics
    assert (m["tp"], m["fn"], m["tn"], m["fp"]) == (30, 0, 30, 0)
    assert m["accuracy"] == 100.0 and m["mcc"] == 1.0
    assert not report.incomplete

    store = RunStore(cfg.output_dir, cfg.id)
    for path in (store.report_path, store.run_info_path, store.query_log_path,
                 store.csv_path("cases"), store.csv_path("metrics"), store.csv_path("cost")):
        assert path.exists()
    header = store.csv_path("metrics").read_text().splitlines()[0]
    assert header == "experiment,model,template,tp,fn,tn,fp,accuracy,mcc,cases,indeterminate,budget_rejected"


def test_all_unsure_scores_every_case_wrong(tmp_path, corpus_dir):
    cfg = verify_config(tmp_path / "exp", corpus_dir, n_same=100, n_diff=100, backend_extra="unsure_rate = 1.0")
    report = run_verification(cfg)

    [m] = report.metrics
    assert m["fn"] + m["fp"] == 200
    assert (m["tp"], m["tn"]) == (0, 0)
    assert m["accuracy"] == 0.0
    assert report.counters["indeterminate"] == 200


def test_multiple_templates_share_cases(tmp_path, corpus_dir):
    cfg = verify_config(tmp_path / "exp", corpus_dir, n_same=10, n_diff=10,
                        experiment_extra='templates = ["P1", "P2", "P3"]')
    report = run_verification(cfg)
    assert [m["template"] for m in report.metrics] == ["P1", "P2", "P3", "average"]
    by_tier = {}
    for row in report.rows:
        by_tier.setdefault(row["template"], []).append(row["case_id"])
    assert by_tier["P1"] == by_tier["P2"] == by_tier["P3"]
    assert report.notes

    average = report.metrics[-1]
    assert (average["accuracy"], average["mcc"]) == (100.0, 1.0)
    assert "tp" not in average

    lines = RunStore(cfg.output_dir, cfg.id).csv_path("metrics").read_text().splitlines()
    assert lines[1].split(",")[3:7] == ["10", "0", "10", "0"]
    assert lines[-1].split(",")[2:9] == ["average", "", "", "", "", "100.0", "1.0"]


def test_average_rows_follow_each_label_group(tmp_path, corpus_dir):
    directory = tmp_path / "exp"
    path = write_config(directory, ATTRIBUTE, root=corpus_dir, k="[3]", shots="[1]", n_in=5, n_out=5)
    path.write_text(path.read_text().replace("seed = 11", 'seed = 11\ntemplates = ["P1", "P2"]'))
    report = run_attribution(load_config(path))

    averages = [m for m in report.metrics if m["template"] == "average"]
    assert [m["distribution"] for m in averages] == ["all", "in", "out"]
    assert all(m["accuracy"] == 100.0 for m in averages)
    assert "template=average, k=3, shots=1, distribution=all: accuracy 100.0%" in format_report(report.to_dict())


def test_warm_replay_is_byte_identical(tmp_path, corpus_dir):
    cfg = verify_config(tmp_path / "exp", corpus_dir, backend_extra="epsilon = 0.2")
    store = RunStore(cfg.output_dir, cfg.id)

    run_verification(cfg)
    first = store.report_path.read_bytes()

    backend = make_backend(cfg)
    run_verification(cfg, backend=backend)
    assert store.report_path.read_bytes() == first
    assert backend.calls == 0

    info = json.loads(store.run_info_path.read_text())
    assert info["backend_calls"] == 0
    assert info["cache_hits"] == 60


def test_abort_then_rerun_matches_clean_run(tmp_path, corpus_dir):
    extra = "max_in_flight = 1\nmax_consecutive_failures = 2"
    clean = verify_config(tmp_path / "clean", corpus_dir, backend_extra=extra)
    run_verification(clean)

    cfg = verify_config(tmp_path / "flaky", corpus_dir, backend_extra=extra)
    with pytest.raises(RunAborted) as excinfo:
        run_verification(cfg, backend=FlakyBackend(make_backend(cfg), fail_after=10))
    partial = excinfo.value.report
    assert partial.incomplete
    assert partial.counters["annotations"] == {"aborted": 48, "unavailable": 2}
    assert json.loads(RunStore(cfg.output_dir, cfg.id).report_path.read_text())["incomplete"] is True

    run_verification(cfg)
    assert (
        RunStore(cfg.output_dir, cfg.id).report_path.read_bytes()
        == RunStore(clean.output_dir, clean.id).report_path.read_bytes()
    )


def test_cost_reconciles_with_query_log(tmp_path, corpus_dir):
    (tmp_path / "exp").mkdir()
    write_pricing(tmp_path / "exp")
    cfg = verify_config(tmp_path / "exp", corpus_dir, experiment_extra='pricing = "pricing.json"')
    report = run_verification(cfg)

    log = read_query_log(RunStore(cfg.output_dir, cfg.id).query_log_path)
    assert len(log) == report.cost["query_count"] == 60
    assert report.cost["priced"] is True
    assert report.cost["total_cost"] == pytest.approx(sum(r["cost"] for r in log), abs=1e-6)
    assert report.cost["total_cost"] > 0

    summary, text = run_report(cfg)
    assert summary["total_cost"] == pytest.approx(report.cost["total_cost"], abs=1e-6)
    assert "Total $" in text and "verify-test" in text


def test_shared_cache_replays_cost_nothing(tmp_path, corpus_dir):
    directory = tmp_path / "exp"
    directory.mkdir()
    write_pricing(directory)
    first = verify_config(directory, corpus_dir, experiment_extra='pricing = "pricing.json"')
    second_path = directory / "second.toml"
    second_path.write_text((directory / "exp.toml").read_text().replace('id = "verify-test"', 'id = "second"'))
    second = load_config(second_path)
    assert second.output_dir == first.output_dir

    paid = run_verification(first)
    replayed = run_verification(second)

    assert paid.cost["total_cost"] > 0
    assert paid.cost["cache_replays"] == 0
    assert replayed.cost["total_cost"] == 0.0
    assert replayed.cost["rows"] == []
    assert replayed.cost["cache_replays"] == 60

    log = RunStore(second.output_dir, second.id).read_query_log()
    assert log == []
    summary, _ = run_report(second)
    assert summary["total_cost"] == replayed.cost["total_cost"] == sum(r["cost"] for r in log)


def test_config_echo_round_trips(tmp_path, corpus_dir):
    cfg = verify_config(tmp_path / "exp", corpus_dir, n_same=5, n_diff=5)
    report = run_verification(cfg)
    echoed = report.to_dict()["config"]
    assert parse_config(echoed["text"], tmp_path / "exp") == cfg
    assert echoed["backend_override"] is None


def test_dry_run_sends_nothing(tmp_path, corpus_dir):
    (tmp_path / "exp").mkdir()
    write_pricing(tmp_path / "exp")
    cfg = verify_config(tmp_path / "exp", corpus_dir, experiment_extra='pricing = "pricing.json"')
    plan = plan_experiment(cfg)
    assert plan["prompts"] == 60
    assert plan["budget_rejected"] == 0
    assert plan["input_tokens"] > 0
    assert plan["projected_cost"] > 0
    assert not cfg.output_dir.exists()


def test_dry_run_uses_model_token_ratio(tmp_path, corpus_dir):
    plain = plan_experiment(verify_config(tmp_path / "plain", corpus_dir))
    dense = plan_experiment(verify_config(
        tmp_path / "dense", corpus_dir,
        backend_extra='\n[backend.bytes_per_token_overrides]\n"mock-oracle" = 2.0',
    ))
    assert dense["prompts"] == plain["prompts"] == 60
    assert dense["input_tokens"] >= 2 * plain["input_tokens"] - plain["prompts"]


# -----------------------------------------------------------
# ATTRIBUTION
# -----------------------------------------------------------
def test_perfect_oracle_attribution(tmp_path, corpus_dir):
    cfg = load_config(write_config(
        tmp_path / "exp", ATTRIBUTE, root=corpus_dir, k="[3, 5]", shots="[1, 2]", n_in=10, n_out=10,
    ))
    report = run_attribution(cfg)

    assert len(report.rows) == 2 * 2 * 20
    assert len(report.metrics) == 2 * 2 * 3
    assert [m["distribution"] for m in report.metrics[:3]] == ["all", "in", "out"]
    for m in report.metrics:
        assert m["accuracy"] == 100.0
    overall = [m for m in report.metrics if m["distribution"] == "all"]
    assert all(m["mcc"] == 1.0 for m in overall)


def test_over_budget_prompts_never_sent(tmp_path, corpus_dir):
    cfg = load_config(write_config(
        tmp_path / "exp", ATTRIBUTE, root=corpus_dir, k=10, shots=3, n_in=5, n_out=5,
        backend_extra="token_limit = 300\nreserved_output_tokens = 256",
    ))
    backend = make_backend(cfg)
    report = run_attribution(cfg, backend=backend)

    assert backend.calls == 0
    assert all(r["annotation"] == "budget" for r in report.rows)
    overall = report.metrics[0]
    assert overall["distribution"] == "all"
    assert overall["budget_rejected"] == 10
    assert overall["accuracy"] == 0.0
    assert (overall["fn"], overall["fp"]) == (5, 5)


# -----------------------------------------------------------
# TOURNAMENT
# -----------------------------------------------------------
def test_perfect_oracle_tournament(tmp_path, corpus_dir):
    (tmp_path / "exp").mkdir()
    write_pricing(tmp_path / "exp")
    cfg = load_config(write_config(
        tmp_path / "exp", TOURNAMENT, root=corpus_dir, n_queries=12, experiment_extra='pricing = "pricing.json"',
    ))
    report = run_tournament_experiment(cfg)

    assert report.metrics[0]["top1"] == 100.0
    assert [r["survivors"] for r in report.round_accuracy] == [5, 1]
    assert all(r["accuracy"] == 100.0 for r in report.round_accuracy)
    assert report.counters["subset_queries"] == 12 * 6
    assert report.cost["unit_cost"] == pytest.approx(report.cost["total_cost"] / 12, abs=1e-6)

    store = RunStore(cfg.output_dir, cfg.id)
    assert store.csv_path("rounds").read_text().splitlines()[0] == "query_id,true_author,survival_round,winner,correct"
    assert len(store.list_tournament_results()) == 12


class FixedUsageBackend:
    """Reports 1000 prompt and 100 output tokens for every call"""

    def __init__(self, inner):
        self.inner = inner
        self.model_id = inner.model_id

    def invoke(self, request):
        return replace(self.inner.invoke(request), prompt_tokens=1000, output_tokens=100)


def test_tournament_cost_matches_hand_computed_total(tmp_path, corpus_dir):
    (tmp_path / "exp").mkdir()
    write_pricing(tmp_path / "exp")
    cfg = load_config(write_config(
        tmp_path / "exp", TOURNAMENT, root=corpus_dir, n_queries=12, experiment_extra='pricing = "pricing.json"',
    ))
    report = run_tournament_experiment(cfg, backend=FixedUsageBackend(make_backend(cfg)))

    # 12 queries x 6 subset queries, each 1000 * 0.005 / 1k + 100 * 0.015 / 1k = 0.0065
    assert report.cost["query_count"] == 72
    assert (report.cost["input_tokens"], report.cost["output_tokens"]) == (72_000, 7_200)
    assert report.cost["total_cost"] == pytest.approx(0.468, abs=1e-9)
    assert report.cost["unit_cost"] == pytest.approx(0.039, abs=1e-9)

    log = RunStore(cfg.output_dir, cfg.id).read_query_log()
    assert len(log) == 72
    assert report.cost["total_cost"] == pytest.approx(sum(r["cost"] for r in log), abs=1e-9)
    summary, text = run_report(cfg)
    assert summary["total_cost"] == pytest.approx(0.468, abs=1e-9)
    assert "Unit cost per attributed query: $0.0390" in text


def test_kill_and_resume_matches_uninterrupted_run(tmp_path, corpus_dir):
    extra = "epsilon = 0.2"
    clean = load_config(write_config(tmp_path / "clean", TOURNAMENT, root=corpus_dir, n_queries=12, backend_extra=extra))
    run_tournament_experiment(clean)

    cfg = load_config(write_config(tmp_path / "killed", TOURNAMENT, root=corpus_dir, n_queries=12, backend_extra=extra))
    with pytest.raises(RunAborted) as excinfo:
        run_tournament_experiment(cfg, backend=FlakyBackend(make_backend(cfg), fail_after=20))
    assert excinfo.value.report.incomplete
    assert len(excinfo.value.report.rows) == 3

    resumed_backend = make_backend(cfg)
    run_tournament_experiment(cfg, backend=resumed_backend, resume=True)
    assert resumed_backend.calls < 12 * 6
    assert (
        RunStore(cfg.output_dir, cfg.id).report_path.read_bytes()
        == RunStore(clean.output_dir, clean.id).report_path.read_bytes()
    )


def test_tournament_budget_is_a_config_error(tmp_path, corpus_dir):
    cfg = load_config(write_config(
        tmp_path / "exp", TOURNAMENT, root=corpus_dir, n_queries=2,
        backend_extra="token_limit = 300\nreserved_output_tokens = 256",
    ))
    with pytest.raises(TournamentBudgetError):
        run_tournament_experiment(cfg)


# -----------------------------------------------------------
# ROBUSTNESS
# -----------------------------------------------------------
def test_robustness_scores_both_prompt_variants(tmp_path, adversarial_dirs):
    root, transformed, pairing = adversarial_dirs
    cfg = load_config(write_config(
        tmp_path / "exp", ROBUSTNESS, root=root, transformed=transformed, pairing=pairing,
    ))
    report = run_robustness(cfg)

    assert len(report.rows) == 2 * 20
    overall = [m for m in report.metrics if m["setting"] == "all"]
    assert [m["adversarial_aware"] for m in overall] == [False, True]
    for m in overall:
        assert 0.0 < m["accuracy"] < 100.0
    settings = {(m["adversarial_aware"], m["setting"]) for m in report.metrics}
    assert (False, "evasion") in settings and (True, "imitation") in settings
