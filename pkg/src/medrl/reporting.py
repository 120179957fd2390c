"""Builds the structured evaluation report from cases and transcripts."""
from __future__ import annotations

from typing import Mapping

from .casegen import checklist_items
from .errors import InvalidCode
from .evalmetrics import (
    FactTraceMatcher,
    LabSelection,
    diagnosis_match,
    hallucination_rate,
    inquiry_coverage,
    lab_f1,
    turn_bin_report,
)
from .factcache import ClaimVerdict, Provenance, VerdictLabel
from .records import SCHEMA_VERSION
from .rubric import JudgeBackend, RubricSet, evaluate_sample

STATIONS = ("inquiry", "lab_f1", "diagnosis")


def transcript_text(record: dict) -> str:
    lines = []
    for turn in record.get("turns", []):
        lines.append(f"physician: {turn.get('physician', '')}")
        lines.append(f"patient: {turn.get('patient', '')}")
    return "\n".join(lines)


def build_report(
    cases: list[dict],
    transcripts: list[dict],
    w2: float = 2.0,
    w1: float = 1.0,
    w_e: float = 2.0,
    w_o: float = 1.0,
    scan_rubrics: Mapping[str, RubricSet] | None = None,
    judge: JudgeBackend | None = None,
) -> dict:
    """Score every transcript against its case and aggregate station means.

    Station scores are averaged per case first and then across cases. A
    syntactically invalid predicted code scores 0 (recorded as such) rather
    than aborting the batch. Cases without a transcript are counted but not
    scored. When scan rubric sets and a judge are supplied, transcripts that
    carry turns get per-dimension rubric scores; records that carry claim
    verdicts get a weighted hallucination rate.
    """
    by_case = {c["case_id"]: c for c in cases}
    per_case = []
    missing = 0
    for record in sorted(transcripts, key=lambda r: r["case_id"]):
        case = by_case.get(record["case_id"])
        if case is None:
            missing += 1
            continue
        items = checklist_items(case)
        matcher = FactTraceMatcher(frozenset(record.get("fact_ids", [])))
        coverage = inquiry_coverage(items, record, matcher, w2=w2, w1=w1)
        selection = LabSelection.build(
            case["essential_tests"],
            case["optional_tests"],
            record.get("selected_tests", []),
        )
        lab = lab_f1(selection, w_e=w_e, w_o=w_o)
        predicted = record.get("predicted_icd")
        try:
            diag = diagnosis_match(predicted, case["truth_icd"]) if predicted else 0.0
        except InvalidCode:
            diag = 0.0
        row = {
            "case_id": record["case_id"],
            "department": case.get("department"),
            "turn_count": record.get("turn_count", 0),
            "mode": record.get("mode"),
            "inquiry": coverage.total,
            "lab_f1": lab.f1,
            "lab_recall": lab.weighted_recall,
            "lab_precision": lab.precision,
            "diagnosis": diag,
        }
        if scan_rubrics is not None and judge is not None and record.get("turns"):
            text = transcript_text(record)
            row["scan"] = {
                dim: evaluate_sample(text, rubric_set, judge)[1]
                for dim, rubric_set in scan_rubrics.items()
            }
        if record.get("verdicts"):
            verdicts = [
                ClaimVerdict(
                    claim_text=v["claim_text"],
                    label=VerdictLabel(v["label"]),
                    provenance=Provenance.external(),
                )
                for v in record["verdicts"]
            ]
            row["hallucination"] = hallucination_rate(verdicts)
        per_case.append(row)

    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "case_count": len(per_case),
        "unmatched_transcripts": missing,
        "stations": {},
        "per_case": per_case,
    }
    if per_case:
        for station in STATIONS:
            report["stations"][station] = sum(r[station] for r in per_case) / len(per_case)
        scanned = [r["scan"] for r in per_case if "scan" in r]
        if scanned:
            dims = sorted({d for s in scanned for d in s})
            report["scan"] = {
                d: sum(s.get(d, 0.0) for s in scanned) / len(scanned) for d in dims
            }
        rated = [r["hallucination"] for r in per_case if "hallucination" in r]
        if rated:
            report["hallucination"] = sum(rated) / len(rated)
    if len(per_case) >= 10:
        bins = turn_bin_report(
            [
                (r["turn_count"], {s: r[s] for s in STATIONS})
                for r in per_case
            ]
        )
        report["turn_bins"] = [
            {"turn_count": b.turn_count, "sessions": b.sessions, "means": b.means}
            for b in bins
        ]
    return report


def render_summary(report: dict) -> str:
    lines = [
        f"cases scored: {report['case_count']}",
        f"unmatched transcripts: {report['unmatched_transcripts']}",
    ]
    for station, value in report.get("stations", {}).items():
        lines.append(f"{station}: {value:.4f}")
    for dim, value in report.get("scan", {}).items():
        lines.append(f"scan.{dim}: {value:.4f}")
    if "hallucination" in report:
        lines.append(f"hallucination: {report['hallucination']:.4f}")
    for b in report.get("turn_bins", []):
        means = " ".join(f"{k}={v:.3f}" for k, v in sorted(b["means"].items()))
        lines.append(f"turns={b['turn_count']} n={b['sessions']} {means}")
    return "\n".join(lines) + "\n"
