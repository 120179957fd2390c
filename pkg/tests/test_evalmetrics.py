from __future__ import annotations

import random

import pytest

from medrl.errors import EmptyChecklist, InvalidCode, ZeroClaims
from medrl.evalmetrics import (
    ChecklistCategory,
    ChecklistItem,
    ChecklistLevel,
    DiagnosisCode,
    FactTraceMatcher,
    KeywordCoverageMatcher,
    LabSelection,
    diagnosis_match,
    hallucination_rate,
    inquiry_coverage,
    lab_f1,
    turn_bin_report,
)
from medrl.factcache import ClaimVerdict, Provenance, VerdictLabel
from medrl.rubric import KeywordJudge, RubricClause, RubricSet


def item(iid, level=2, category=ChecklistCategory.PRESENT_ILLNESS):
    lv = ChecklistLevel.L2_CRITICAL if level == 2 else ChecklistLevel.L1_SUPPLEMENTARY
    return ChecklistItem(id=iid, category=category, level=lv)


def verdicts(labels):
    return [
        ClaimVerdict(claim_text=f"claim {i}", label=label,
                     provenance=Provenance.external())
        for i, label in enumerate(labels)
    ]


# --- inquiry coverage ---

def test_all_covered_is_one_regardless_of_weights():
    items = [item("a", 2), item("b", 1)]
    matcher = FactTraceMatcher(frozenset({"a", "b"}))
    report = inquiry_coverage(items, {}, matcher, w2=5.0, w1=0.5)
    assert report.total == 1.0


def test_weighted_coverage_worked_example():
    items = [item("a", 2), item("b", 2), item("c", 1), item("d", 1)]
    matcher = FactTraceMatcher(frozenset({"a", "b"}))
    report = inquiry_coverage(items, {}, matcher, w2=2.0, w1=1.0)
    assert report.total == pytest.approx(2 * 2 / (2 * 2 + 1 * 2))
    assert report.covered_count == 2


def test_equal_weights_reduce_to_plain_fraction():
    items = [item(f"i{k}", 2 if k % 2 else 1) for k in range(8)]
    covered = frozenset({"i0", "i1", "i2"})
    report = inquiry_coverage(items, {}, FactTraceMatcher(covered), w2=1.0, w1=1.0)
    assert report.total == pytest.approx(3 / 8)


def test_repeated_offtopic_mentions_contribute_zero():
    items = [item("fever", 2)]
    transcript = "I am 54 years old. " * 5 + "No fever was discussed."
    matcher = KeywordCoverageMatcher(keywords={"fever": ["fever lasted"]})
    report = inquiry_coverage(items, transcript, matcher)
    assert report.total == 0.0


def test_boilerplate_is_stripped_before_matching():
    items = [item("intro", 2)]
    transcript = "I am Dr. Example speaking today."
    matcher = KeywordCoverageMatcher(keywords={"intro": ["dr. example"]})
    report = inquiry_coverage(items, transcript, matcher)
    assert report.total == 0.0  # templated self-introduction scores nothing


def test_coverage_by_category_breakdown():
    items = [
        item("a", 2, ChecklistCategory.PRESENT_ILLNESS),
        item("b", 2, ChecklistCategory.PAST_HISTORY),
    ]
    report = inquiry_coverage(items, {}, FactTraceMatcher(frozenset({"a"})))
    assert report.by_category["present_illness"] == 1.0
    assert report.by_category["past_history"] == 0.0
    assert "family" not in report.by_category


def test_empty_checklist_rejected():
    with pytest.raises(EmptyChecklist):
        inquiry_coverage([], {}, FactTraceMatcher(frozenset()))


def test_scan_dimensions_scored_separately():
    items = [item("a", 2)]
    scan_rubrics = {
        "safety_stratification": RubricSet([
            RubricClause(id="red-flags", text="asks about red flags", weight=2),
        ]),
        "information_clarification": RubricSet([
            RubricClause(id="clarifies", text="clarifies the complaint", weight=1),
        ]),
    }
    judge = KeywordJudge({"red-flags": ["chest pain"], "clarifies": ["how long"]})
    transcript = "Any chest pain? How long has this lasted?"
    report = inquiry_coverage(items, transcript, FactTraceMatcher(frozenset({"a"})),
                              scan_rubrics=scan_rubrics, judge=judge)
    assert report.scan == {
        "safety_stratification": 1.0,
        "information_clarification": 1.0,
    }
    assert report.total == 1.0  # scan scores never mix into coverage


# --- lab f1 ---

def test_lab_f1_worked_example():
    sel = LabSelection.build({"A", "B"}, {"C"}, {"A", "C", "D"})
    out = lab_f1(sel, w_e=2.0, w_o=1.0)
    assert out.weighted_recall == pytest.approx(0.6)
    assert out.precision == pytest.approx(2 / 3)
    assert out.f1 == pytest.approx(0.6316, abs=1e-4)


def test_lab_f1_perfect_selection():
    sel = LabSelection.build({"A", "B"}, {"C"}, {"A", "B", "C"})
    out = lab_f1(sel)
    assert (out.weighted_recall, out.precision, out.f1) == (1.0, 1.0, 1.0)


def test_lab_f1_empty_selection_is_zero():
    out = lab_f1(LabSelection.build({"A"}, {"B"}, set()))
    assert (out.weighted_recall, out.precision, out.f1) == (0.0, 0.0, 0.0)


def test_lab_f1_recall_monotone_in_selected_essentials():
    rng = random.Random(6)
    essential = {f"e{k}" for k in range(5)}
    optional = {f"o{k}" for k in range(3)}
    selected = {"o0"}
    prev = lab_f1(LabSelection.build(essential, optional, selected)).weighted_recall
    for e in sorted(essential):
        selected = selected | {e}
        cur = lab_f1(LabSelection.build(essential, optional, selected)).weighted_recall
        assert cur >= prev
        prev = cur


def test_lab_selection_validation():
    with pytest.raises(ValueError):
        LabSelection.build({"A"}, {"A"}, set())
    with pytest.raises(ValueError):
        LabSelection.build({"A"}, {"B"}, {"Z"}, universe={"A", "B"})


# --- diagnosis matching ---

def test_diagnosis_tiers():
    assert diagnosis_match("J18.9", "J18.9") == 1.0
    assert diagnosis_match("J18.9", "J18.0") == 0.5
    assert diagnosis_match("J18.9", "J20.1") == 0.25
    assert diagnosis_match("J18.9", "K35.2") == 0.0


def test_diagnosis_tier_ordering_property():
    exact = diagnosis_match("A01.1", "A01.1")
    category = diagnosis_match("A01.2", "A01.1")
    chapter = diagnosis_match("A09", "A01.1")
    off = diagnosis_match("B20", "A01.1")
    assert exact > category > chapter > off


def test_diagnosis_symmetric_at_every_tier():
    pairs = [("J18.9", "J18.9"), ("J18.9", "J18.0"), ("J18.9", "J20.1"),
             ("J18.9", "K35.2")]
    for a, b in pairs:
        assert diagnosis_match(a, b) == diagnosis_match(b, a)


def test_diagnosis_code_shape_validation():
    for bad in ("18J.9", "J1", "J18.123", "j18.9", "J18.", ""):
        with pytest.raises(InvalidCode):
            DiagnosisCode(bad)
    assert DiagnosisCode("I10").category == "I10"
    assert DiagnosisCode("J18.9").chapter == "J"


# --- hallucination rate ---

S, R, U = VerdictLabel.SUPPORTED, VerdictLabel.REFUTED, VerdictLabel.UNCERTAIN


def test_hallucination_rate_worked_example():
    vs = verdicts([R] + [U, U] + [S] * 7)
    assert hallucination_rate(vs) == pytest.approx(0.2)


def test_hallucination_rate_extremes():
    assert hallucination_rate(verdicts([S] * 4)) == 0.0
    assert hallucination_rate(verdicts([R] * 4)) == 1.0


def test_hallucination_rate_permutation_invariant():
    rng = random.Random(14)
    labels = [rng.choice([S, R, U]) for _ in range(20)]
    base = hallucination_rate(verdicts(labels))
    for _ in range(10):
        rng.shuffle(labels)
        assert hallucination_rate(verdicts(labels)) == base


def test_hallucination_rate_linear_in_uncertain_count():
    n = 10
    values = [
        hallucination_rate(verdicts([U] * k + [S] * (n - k))) for k in range(n + 1)
    ]
    diffs = [b - a for a, b in zip(values, values[1:])]
    assert all(d == pytest.approx(0.5 / n) for d in diffs)


def test_hallucination_rate_zero_claims():
    with pytest.raises(ZeroClaims):
        hallucination_rate([])


# --- turn bins ---

def sessions_with_bins():
    sessions = []
    for _ in range(60):
        sessions.append((5, {"inquiry": 0.6}))
    for _ in range(31):
        sessions.append((8, {"inquiry": 0.8}))
    for _ in range(9):
        sessions.append((12, {"inquiry": 0.2}))
    return sessions


def test_sparse_bin_dropped():
    bins = turn_bin_report(sessions_with_bins())
    assert [b.turn_count for b in bins] == [5, 8]  # the 9/100 bin is gone
    assert bins[0].means["inquiry"] == pytest.approx(0.6)


def test_boundary_bin_retained():
    sessions = [(5, {"x": 1.0})] * 90 + [(9, {"x": 0.5})] * 10
    bins = turn_bin_report(sessions)
    assert [b.turn_count for b in bins] == [5, 9]


def test_single_bin_retained():
    sessions = [(4, {"x": 0.25})] * 12
    bins = turn_bin_report(sessions)
    assert len(bins) == 1
    assert bins[0].sessions == 12
    assert bins[0].means["x"] == pytest.approx(0.25)


def test_too_few_sessions_rejected():
    with pytest.raises(ValueError):
        turn_bin_report([(3, {"x": 1.0})] * 9)
