"""Scripted standardized-patient simulator with dual-visibility sessions.

The simulator is passive by design: it answers exactly what the physician
asks, never volunteers unrequested checklist facts, and never asks
questions of its own. A session is sampled into one of two modes. In
passive mode both parties start from an empty transcript. In interruption
mode a scripted dialogue snippet ending in a patient question is seeded
into the physician's view only; the simulator never sees it, which keeps
the snippet's style from bleeding into its replies.

Language realization is a pluggable backend; the shipped default is a
template plus fact-table engine, so every factual token in a reply traces
to a profile fact and inquiry coverage is exactly computable.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .errors import SnippetMissing

PASSIVE_PROBABILITY = 0.75
END_OF_TURN_PROBABILITY = 0.5

DEFAULT_DONT_KNOW = "I'm not sure about that."


class InteractionMode(str, Enum):
    PASSIVE = "passive"
    INTERRUPTION = "interruption"


class InjectionVariant(str, Enum):
    END_OF_TURN = "end_of_turn"
    MID_TURN = "mid_turn"


@dataclass(frozen=True)
class ProfileFact:
    """One disclosable fact, keyed to a checklist item."""

    checklist_id: str
    keywords: tuple[str, ...]
    statement: str

    def __post_init__(self):
        if "?" in self.statement:
            raise ValueError(
                f"fact {self.checklist_id}: statements must be declarative"
            )
        if not self.keywords:
            raise ValueError(f"fact {self.checklist_id}: needs at least one keyword")


@dataclass
class PatientCase:
    case_id: str
    profile: dict[str, ProfileFact]
    inquiry_rubrics: str | None = None
    behavior_constraints: list[str] = field(default_factory=list)
    snippet: list[tuple[str, str]] | None = None  # (role, text) turns
    snippet_injection: InjectionVariant | None = None
    dont_know: str = DEFAULT_DONT_KNOW

    def __post_init__(self):
        if self.snippet is not None:
            if not self.snippet:
                raise ValueError("snippet, when present, must have turns")
            role, text = self.snippet[-1]
            if role != "patient" or not text.rstrip().endswith("?"):
                raise ValueError(
                    "snippet must end with a patient-initiated question"
                )

    @classmethod
    def from_record(cls, record: dict) -> "PatientCase":
        profile = {}
        for fact in record.get("profile", []):
            profile[fact["checklist_id"]] = ProfileFact(
                checklist_id=fact["checklist_id"],
                keywords=tuple(fact["keywords"]),
                statement=fact["statement"],
            )
        snippet = record.get("snippet")
        if snippet is not None:
            snippet = [(t["role"], t["text"]) for t in snippet]
        variant = record.get("snippet_injection")
        return cls(
            case_id=record["case_id"],
            profile=profile,
            inquiry_rubrics=record.get("inquiry_rubrics"),
            behavior_constraints=list(record.get("behavior_constraints", [])),
            snippet=snippet,
            snippet_injection=InjectionVariant(variant) if variant else None,
        )


@dataclass
class SessionView:
    """Paired transcripts with asymmetric snippet visibility.

    ``physician_view`` includes any injected snippet; ``simulator_view``
    never does. Both views grow in lockstep once the live exchange starts.
    """

    physician_view: list[tuple[str, str]] = field(default_factory=list)
    simulator_view: list[tuple[str, str]] = field(default_factory=list)
    injected: tuple[tuple[str, str], ...] = ()
    disclosed_fact_ids: list[str] = field(default_factory=list)

    def record(self, role: str, text: str) -> None:
        self.physician_view.append((role, text))
        self.simulator_view.append((role, text))

    def check_asymmetry(self) -> None:
        """The simulator view must be the physician view minus the snippet."""
        n = len(self.injected)
        if tuple(self.physician_view[:n]) != self.injected:
            raise AssertionError("physician view lost its injected snippet prefix")
        if self.physician_view[n:] != self.simulator_view:
            raise AssertionError("views diverged beyond the injected snippet")
        snippet_texts = {text for _role, text in self.injected}
        for _role, text in self.simulator_view:
            if text in snippet_texts:
                raise AssertionError("snippet content leaked into the simulator view")


def sample_mode(
    rng: random.Random | int,
) -> tuple[InteractionMode, InjectionVariant | None]:
    """Draw the session mode: passive 75%, interruption 25%; within
    interruption, end-of-turn and mid-turn placement are equally likely."""
    if isinstance(rng, int):
        rng = random.Random(rng)
    if rng.random() < PASSIVE_PROBABILITY:
        return InteractionMode.PASSIVE, None
    if rng.random() < END_OF_TURN_PROBABILITY:
        return InteractionMode.INTERRUPTION, InjectionVariant.END_OF_TURN
    return InteractionMode.INTERRUPTION, InjectionVariant.MID_TURN


def build_session(
    case: PatientCase,
    mode: InteractionMode,
    variant: InjectionVariant | None = None,
) -> SessionView:
    """Seed the dual views for a new session.

    Passive sessions start empty on both sides. Interruption sessions seed
    the physician view with the snippet: the full script for end-of-turn
    placement, or the first half of the script followed immediately by the
    closing patient question for mid-turn placement.
    """
    if mode is InteractionMode.PASSIVE:
        return SessionView()
    if case.snippet is None:
        raise SnippetMissing(f"case {case.case_id} has no snippet for interruption mode")
    variant = variant or case.snippet_injection or InjectionVariant.END_OF_TURN
    script = list(case.snippet)
    if variant is InjectionVariant.END_OF_TURN:
        injected = tuple(script)
    else:
        # the question interrupts mid-script instead of closing it
        question = script[-1]
        midpoint = max(1, (len(script) - 1) // 2)
        injected = tuple(script[:midpoint] + [question])
    return SessionView(
        physician_view=list(injected),
        simulator_view=[],
        injected=injected,
    )


def respond(case: PatientCase, session: SessionView, physician_utterance: str) -> str:
    """Answer one physician turn from the profile fact table.

    A fact is disclosed when any of its keyword phrases appears in the
    question; matched statements are concatenated in checklist order. A
    question matching no fact gets the configured don't-know reply. Replies
    never contain a question mark. Both views are appended in place.
    """
    question = physician_utterance.lower()
    matched = [
        fact
        for _cid, fact in sorted(case.profile.items())
        if any(kw.lower() in question for kw in fact.keywords)
    ]
    if matched:
        reply = " ".join(fact.statement for fact in matched)
        session.disclosed_fact_ids.extend(fact.checklist_id for fact in matched)
    else:
        reply = case.dont_know
    assert "?" not in reply  # passivity: the simulator never asks
    session.record("physician", physician_utterance)
    session.record("patient", reply)
    return reply
