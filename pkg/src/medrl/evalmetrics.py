"""Consultation evaluation metrics.

Covers the three stations of a simulated consultation (inquiry checklist
coverage, test-selection F1, diagnosis code matching), a weighted
hallucination rate over claim verdicts, and a turn-binned report that drops
sparse bins. Scores are averaged per case first and then across cases.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Protocol

from .errors import EmptyChecklist, InvalidCode, ZeroClaims
from .factcache import ClaimVerdict, VerdictLabel
from .rubric import JudgeBackend, RubricSet, evaluate_sample


class ChecklistCategory(str, Enum):
    PRESENT_ILLNESS = "present_illness"
    PAST_HISTORY = "past_history"
    PERSONAL_SOCIAL = "personal_social"
    OBGYN = "obgyn"
    FAMILY = "family"


class ChecklistLevel(Enum):
    L1_SUPPLEMENTARY = 1
    L2_CRITICAL = 2


@dataclass
class ChecklistItem:
    id: str
    category: ChecklistCategory
    level: ChecklistLevel
    covered: bool = False


class CoverageMatcher(Protocol):
    def is_covered(self, item: ChecklistItem, transcript: object) -> bool: ...


@dataclass
class FactTraceMatcher:
    """Coverage by exact fact-id tracing: an item counts as covered when its
    id appears among the disclosed fact ids of the transcript. Repeats add
    nothing, and content that maps to no checklist item contributes zero."""

    disclosed_ids: frozenset[str]

    def is_covered(self, item: ChecklistItem, transcript: object) -> bool:
        return item.id in self.disclosed_ids


@dataclass
class KeywordCoverageMatcher:
    """Coverage by keyword search in the transcript text, with configured
    boilerplate (templated self-introductions, demographic restatements)
    stripped before matching so repeated non-diagnostic lines score zero."""

    keywords: Mapping[str, list[str]]  # item id -> phrases, any-of
    boilerplate_patterns: list[str] = field(
        default_factory=lambda: [r"(?im)^i am dr\.?\s.*$",
                                 r"(?im)^as mentioned,?\s.*(age|years old).*$"]
    )

    def is_covered(self, item: ChecklistItem, transcript: object) -> bool:
        text = str(transcript)
        for pattern in self.boilerplate_patterns:
            text = re.sub(pattern, "", text)
        text = text.lower()
        phrases = self.keywords.get(item.id, [])
        return any(p.lower() in text for p in phrases)


SCAN_DIMENSIONS = (
    "safety_stratification",
    "information_clarification",
    "associative_questioning",
    "normative_output",
)


@dataclass(frozen=True)
class InquiryReport:
    total: float
    by_category: dict[str, float]
    covered_count: int
    item_count: int
    scan: dict[str, float] | None = None


def inquiry_coverage(
    items: list[ChecklistItem],
    transcript: object,
    matcher: CoverageMatcher | None,
    w2: float = 2.0,
    w1: float = 1.0,
    scan_rubrics: Mapping[str, RubricSet] | None = None,
    judge: JudgeBackend | None = None,
) -> InquiryReport:
    """Weighted checklist coverage plus optional per-dimension rubric scores.

    Critical (level 2) items weigh ``w2``, supplementary ones ``w1``. Each
    item counts at most once no matter how often the transcript mentions
    it. When rubric sets and a judge are supplied, each dimension is scored
    as a rubric aggregate over the transcript and reported separately; the
    dimension scores never mix into the coverage total.
    """
    if not items:
        raise EmptyChecklist("inquiry coverage needs at least one checklist item")
    if w1 <= 0 or w2 <= 0:
        raise ValueError("weights must be positive")

    def weight(item: ChecklistItem) -> float:
        return w2 if item.level is ChecklistLevel.L2_CRITICAL else w1

    def covered(item: ChecklistItem) -> bool:
        if matcher is None:
            return item.covered
        return matcher.is_covered(item, transcript)

    total_weight = sum(weight(i) for i in items)
    flags = {i.id: covered(i) for i in items}
    covered_weight = sum(weight(i) for i in items if flags[i.id])

    by_category: dict[str, float] = {}
    for category in ChecklistCategory:
        members = [i for i in items if i.category is category]
        if not members:
            continue
        cat_total = sum(weight(i) for i in members)
        cat_covered = sum(weight(i) for i in members if flags[i.id])
        by_category[category.value] = cat_covered / cat_total

    scan = None
    if scan_rubrics is not None:
        if judge is None:
            raise ValueError("scoring scan dimensions requires a judge backend")
        scan = {}
        for dimension, rubric_set in scan_rubrics.items():
            _decisions, reward = evaluate_sample(str(transcript), rubric_set, judge)
            scan[dimension] = reward

    return InquiryReport(
        total=covered_weight / total_weight,
        by_category=by_category,
        covered_count=sum(1 for v in flags.values() if v),
        item_count=len(items),
        scan=scan,
    )


# --- lab test selection ---

@dataclass(frozen=True)
class LabSelection:
    essential: frozenset[str]
    optional_tests: frozenset[str]
    selected: frozenset[str]
    universe: frozenset[str] | None = None

    def __post_init__(self):
        if self.essential & self.optional_tests:
            raise ValueError("essential and optional test sets must be disjoint")
        if self.universe is not None and not self.selected <= self.universe:
            raise ValueError("selected tests must come from the action universe")

    @classmethod
    def build(cls, essential, optional_tests, selected, universe=None) -> "LabSelection":
        return cls(
            essential=frozenset(essential),
            optional_tests=frozenset(optional_tests),
            selected=frozenset(selected),
            universe=None if universe is None else frozenset(universe),
        )


@dataclass(frozen=True)
class LabF1:
    weighted_recall: float
    precision: float
    f1: float


def lab_f1(sel: LabSelection, w_e: float = 2.0, w_o: float = 1.0) -> LabF1:
    """Weighted F1 over test selection; essential recall weighs more.

    An empty selection scores all zeros by convention.
    """
    if w_e <= 0 or w_o <= 0:
        raise ValueError("weights must be positive")
    if not sel.selected:
        return LabF1(0.0, 0.0, 0.0)
    relevant = sel.essential | sel.optional_tests
    denom = w_e * len(sel.essential) + w_o * len(sel.optional_tests)
    if denom == 0:
        return LabF1(0.0, 0.0, 0.0)
    recall = (
        w_e * len(sel.selected & sel.essential)
        + w_o * len(sel.selected & sel.optional_tests)
    ) / denom
    precision = len(sel.selected & relevant) / len(sel.selected)
    f1 = 0.0
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return LabF1(weighted_recall=recall, precision=precision, f1=f1)


# --- diagnosis matching ---

_ICD10_RE = re.compile(r"^[A-Z]\d{2}(?:\.[A-Za-z0-9]{1,2})?$")

TIER_EXACT = 1.0
TIER_CATEGORY = 0.5
TIER_CHAPTER = 0.25
TIER_OFF = 0.0


@dataclass(frozen=True)
class DiagnosisCode:
    icd10: str

    def __post_init__(self):
        if not _ICD10_RE.match(self.icd10):
            raise InvalidCode(self.icd10)

    @property
    def chapter(self) -> str:
        return self.icd10[0]

    @property
    def category(self) -> str:
        return self.icd10[:3]


def diagnosis_match(pred: DiagnosisCode | str, truth: DiagnosisCode | str) -> float:
    """Tiered hierarchical score: exact code 1.0, same three-character
    category 0.5, same chapter letter 0.25, off-branch 0.0."""
    p = pred if isinstance(pred, DiagnosisCode) else DiagnosisCode(pred)
    t = truth if isinstance(truth, DiagnosisCode) else DiagnosisCode(truth)
    if p.icd10 == t.icd10:
        return TIER_EXACT
    if p.category == t.category:
        return TIER_CATEGORY
    if p.chapter == t.chapter:
        return TIER_CHAPTER
    return TIER_OFF


# --- hallucination rate ---

HALLU_WEIGHTS = {
    VerdictLabel.REFUTED: 1.0,
    VerdictLabel.UNCERTAIN: 0.5,
    VerdictLabel.SUPPORTED: 0.0,
}


def hallucination_rate(verdicts: list[ClaimVerdict]) -> float:
    """Weighted hallucination rate: refuted claims count 1.0, uncertain
    claims 0.5, supported claims 0, divided by the total claim count."""
    if not verdicts:
        raise ZeroClaims("hallucination rate undefined with zero claims")
    return sum(HALLU_WEIGHTS[v.label] for v in verdicts) / len(verdicts)


# --- turn-binned reporting ---

@dataclass(frozen=True)
class TurnBin:
    turn_count: int
    sessions: int
    means: dict[str, float]


def turn_bin_report(
    sessions: list[tuple[int, dict[str, float]]],
    min_fraction: float = 0.10,
) -> list[TurnBin]:
    """Group sessions by turn count and report per-bin dimension means,
    dropping bins holding fewer than ``min_fraction`` of all sessions.
    Bins exactly at the boundary are retained."""
    if len(sessions) < 10:
        raise ValueError("turn-bin report needs at least 10 sessions")
    groups: dict[int, list[dict[str, float]]] = {}
    for turn_count, dims in sessions:
        groups.setdefault(turn_count, []).append(dims)
    total = len(sessions)
    bins = []
    for turn_count in sorted(groups):
        members = groups[turn_count]
        if len(members) / total < min_fraction:
            continue
        keys = sorted({k for dims in members for k in dims})
        means = {
            k: sum(d.get(k, 0.0) for d in members) / len(members) for k in keys
        }
        bins.append(TurnBin(turn_count=turn_count, sessions=len(members), means=means))
    return bins
