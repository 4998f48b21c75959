"""Prompt ladder rendering and token budget checks"""

import pytest

from corpus_engine import AttributionCase, CodeSample, Expected, VerificationCase
from prompt_engine import (
    ANSWER_LINES,
    FORMAT_REMINDER,
    PromptTemplate,
    TaskKind,
    TemplateError,
    bytes_per_token_for,
    check_budget,
    default_adversarial_note,
    estimate_tokens,
    fence,
    load_templates,
    render_attribution,
    render_tournament,
    render_verification,
)

TEMPLATES = load_templates()


def make_sample(author, task, text="int main() {\n    return 0;\n}\n"):
    return CodeSample(author=author, task=task, language="cpp", text=text)


def verification_case():
    return VerificationCase(
        make_sample("alice", "t1"), make_sample("bob", "t2", "int f() { return 1; }\n"), Expected.DIFFERENT
    )


def attribution_case(k=3):
    refs = {f"author{i}": (make_sample(f"author{i}", "t1", f"int v{i};\n"),) for i in range(k)}
    return AttributionCase(refs, make_sample("author0", "t2"), "author0", case_id="c1")


def test_every_tier_and_kind_loaded():
    for kind in TaskKind:
        for tier in ("P1", "P2", "P3"):
            assert TEMPLATES.get(kind, tier).task_kind is kind


def test_verification_prompt_contains_both_snippets():
    p = render_verification(TEMPLATES.get(TaskKind.VERIFY, "P1"), verification_case())
    assert "Code snippet 1:" in p.text and "Code snippet 2:" in p.text
    assert "int f() { return 1; }" in p.text
    assert p.text.rstrip().endswith(ANSWER_LINES[TaskKind.VERIFY])
    assert p.token_estimate == estimate_tokens(p.text)


def test_adversarial_note_only_when_flagged():
    template = TEMPLATES.get(TaskKind.VERIFY, "P2")
    plain = render_verification(template, verification_case(), adversarial_aware=False)
    aware = render_verification(template, verification_case(), adversarial_aware=True)
    note = default_adversarial_note()
    assert note not in plain.text
    assert note in aware.text
    assert aware.text.replace(note + "\n\n", "") == plain.text


def test_feature_guidance_ladder():
    case = verification_case()
    p1 = render_verification(TEMPLATES.get(TaskKind.VERIFY, "P1"), case).text
    p2 = render_verification(TEMPLATES.get(TaskKind.VERIFY, "P2"), case).text
    p3 = render_verification(TEMPLATES.get(TaskKind.VERIFY, "P3"), case).text
    assert "layout features" not in p1
    assert "layout features" in p2 and "syntactic features" in p2
    assert "Indentation patterns" in p3 and "Commenting style" in p3


def test_rendering_is_deterministic():
    template = TEMPLATES.get(TaskKind.ATTRIBUTE, "P1")
    a = render_attribution(template, attribution_case(), seed=9)
    b = render_attribution(template, attribution_case(), seed=9)
    assert a.text == b.text
    assert a.case_fingerprint == b.case_fingerprint
    assert a.label_map == b.label_map


def test_attribution_labels_cover_candidates():
    p = render_attribution(TEMPLATES.get(TaskKind.ATTRIBUTE, "P1"), attribution_case(5), seed=1)
    assert sorted(p.label_map) == [f"Author {i}" for i in range(1, 6)]
    assert sorted(p.label_map.values()) == [f"author{i}" for i in range(5)]
    for label in p.label_map:
        assert f"{label}, sample 1:" in p.text
    assert "Query code:" in p.text


def test_code_with_backticks_gets_longer_fence():
    sample = make_sample("a", "t", "s = \"```\";\n")
    fenced = fence(sample)
    assert fenced.startswith("````cpp\n")
    assert fenced.endswith("\n````")


def test_code_braces_survive_rendering():
    case = VerificationCase(
        make_sample("alice", "t1", "auto s = \"{code_b}\";\n"), make_sample("alice", "t2"), Expected.SAME
    )
    p = render_verification(TEMPLATES.get(TaskKind.VERIFY, "P1"), case)
    assert "auto s = \"{code_b}\";" in p.text
    assert p.text.count("Code snippet 2:") == 1


def test_tournament_subset_limits():
    template = TEMPLATES.get(TaskKind.TOURNAMENT, "P1")
    query = make_sample("x0", "t2")
    groups = [(f"x{i}", [make_sample(f"x{i}", "t1")]) for i in range(13)]
    with pytest.raises(TemplateError):
        render_tournament(template, groups, query)
    p = render_tournament(template, groups[:12], query)
    assert len(p.label_map) == 12


def test_wrong_kind_rejected():
    with pytest.raises(TemplateError):
        render_verification(TEMPLATES.get(TaskKind.ATTRIBUTE, "P1"), verification_case())


def test_template_validation():
    with pytest.raises(TemplateError):
        PromptTemplate("P1", TaskKind.VERIFY, "only {code_a}")
    with pytest.raises(TemplateError):
        PromptTemplate("P2", TaskKind.VERIFY, "{feature_guidance} {code_a} {code_b}", "")
    with pytest.raises(TemplateError):
        PromptTemplate("P1", TaskKind.VERIFY, "{code_a} {code_b} {query_code}")
    with pytest.raises(TemplateError):
        PromptTemplate("P9", TaskKind.VERIFY, "{code_a} {code_b}")


def test_estimate_tokens():
    assert estimate_tokens("abcd") == 1
    assert estimate_tokens("abcde") == 2
    assert estimate_tokens("é" * 4, bytes_per_token=2) == 4


def test_bytes_per_token_overrides():
    overrides = {"gpt-4o": 3.5, "mock-oracle": 2.0}
    assert bytes_per_token_for("gpt-4o", overrides) == 3.5
    assert bytes_per_token_for("mock-oracle/eps=0.0/seed=1", overrides) == 2.0
    assert bytes_per_token_for("gemini-1.5-pro", overrides) == 4
    assert bytes_per_token_for("gemini-1.5-pro", overrides, default=3.0) == 3.0


def test_budget_check():
    p = render_attribution(TEMPLATES.get(TaskKind.ATTRIBUTE, "P1"), attribution_case(), seed=0)
    assert check_budget(p, p.token_estimate + 256) is None
    over = check_budget(p, p.token_estimate + 255)
    assert over is not None
    assert over.limit == p.token_estimate + 255
    assert str(over.token_estimate) in over.message


def test_format_reminder_names_answer_format():
    assert "ANSWER: <label>" in FORMAT_REMINDER
