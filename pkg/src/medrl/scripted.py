"""Scripted physician sessions over generated cases.

Runs a deterministic physician script against the patient simulator: ask
about a seeded subset of the profile facts, order tests, commit to a
diagnosis. The emitted transcript record carries both visibility views plus
the disclosed fact ids, selected tests, and predicted code, which is
exactly what the evaluation metrics consume.
"""
from __future__ import annotations

import random
import zlib

from .patient import (
    InteractionMode,
    PatientCase,
    build_session,
    respond,
    sample_mode,
)
from .pipeline import sample_prediction
from .records import SCHEMA_VERSION


def run_scripted_session(
    case_record: dict,
    seed: int = 0,
    ask_fraction: float = 0.75,
) -> dict:
    """Play one full physician-vs-simulator session and return its record."""
    case = PatientCase.from_record(case_record)
    rng = random.Random(zlib.crc32(f"{seed}:{case.case_id}".encode("utf-8")))
    mode, variant = sample_mode(rng)
    session = build_session(case, mode, variant)
    if mode is InteractionMode.INTERRUPTION:
        # the physician answers the snippet question before resuming inquiry;
        # the answer references hidden content, so it stays physician-only
        session.physician_view.append(
            ("physician", "Let me address that, then I need a few more details.")
        )
        session.injected = tuple(session.physician_view)

    turns = []
    for _cid, fact in sorted(case.profile.items()):
        if rng.random() >= ask_fraction:
            continue
        question = f"Can you tell me about your {fact.keywords[0]}?"
        before = len(session.disclosed_fact_ids)
        reply = respond(case, session, question)
        session.check_asymmetry()
        turns.append(
            {
                "physician": question,
                "patient": reply,
                "fact_ids": session.disclosed_fact_ids[before:],
            }
        )

    selected = []
    for test in case_record["essential_tests"]:
        if rng.random() < 0.85:
            selected.append(test)
    for test in case_record["optional_tests"]:
        if rng.random() < 0.5:
            selected.append(test)
    for test in case_record.get("decoy_tests", []):
        if rng.random() < 0.1:
            selected.append(test)
    predicted = sample_prediction(case_record["truth_icd"], rng)

    return {
        "schema_version": SCHEMA_VERSION,
        "case_id": case.case_id,
        "mode": mode.value,
        "variant": variant.value if variant else None,
        "turn_count": len(turns),
        "turns": turns,
        "physician_view": [
            {"role": role, "text": text} for role, text in session.physician_view
        ],
        "simulator_view": [
            {"role": role, "text": text} for role, text in session.simulator_view
        ],
        "fact_ids": sorted(set(session.disclosed_fact_ids)),
        "selected_tests": sorted(set(selected)),
        "predicted_icd": predicted,
    }
