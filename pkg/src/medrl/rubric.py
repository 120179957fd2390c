"""Rubric reward scoring and dynamic clause lifecycle.

A rubric set is a list of independently judged clauses carrying signed
integer weights: positive weights reward satisfied criteria, negative
weights penalize triggered ones. Per-clause binary decisions aggregate into
a scalar reward normalized into [0, 1], so reward distributions stay
comparable across samples with different clause counts and weight
magnitudes.

Dynamic clauses additionally follow an admission/exit lifecycle driven by
observed violation rates: a candidate is activated only once it targets a
frequent enough failure mode, and an active clause is retired after staying
clean for several consecutive epochs. Core clauses never transition.
"""
from __future__ import annotations

import re
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Protocol

from .errors import (
    DuplicateDecision,
    EmptyRubricSet,
    JudgeMalformedOutput,
    JudgeUnavailable,
    MissingDecision,
    UnknownClause,
)
from .records import read_jsonl, write_jsonl


class ClauseKind(str, Enum):
    CORE = "core"
    DYNAMIC = "dynamic"


class Lifecycle(str, Enum):
    CANDIDATE = "candidate"
    ACTIVE = "active"
    RETIRED = "retired"


@dataclass(frozen=True)
class RubricClause:
    """One independently decidable criterion with a signed integer weight."""

    id: str
    text: str
    weight: int
    kind: ClauseKind = ClauseKind.CORE
    lifecycle: Lifecycle = Lifecycle.ACTIVE

    def __post_init__(self):
        if not self.id:
            raise ValueError("clause id must be non-empty")
        if isinstance(self.weight, bool) or not isinstance(self.weight, int):
            raise ValueError(f"clause {self.id}: weight must be an integer")
        if self.weight == 0 or not -10 <= self.weight <= 10:
            raise ValueError(
                f"clause {self.id}: weight must be a nonzero integer in [-10, 10]"
            )
        if self.kind is ClauseKind.CORE and self.lifecycle is not Lifecycle.ACTIVE:
            raise ValueError(f"clause {self.id}: core clauses are always active")


@dataclass(frozen=True)
class JudgeDecision:
    """Binary verdict for one clause: 1 = satisfied, 0 = not satisfied."""

    clause_id: str
    satisfied: int
    judge_id: str = "unknown"

    def __post_init__(self):
        if self.satisfied not in (0, 1):
            raise ValueError(
                f"decision for {self.clause_id}: satisfied must be 0 or 1"
            )


def score_rubrics(scored: list[tuple[RubricClause, JudgeDecision]]) -> float:
    """Aggregate per-clause decisions into a normalized reward in [0, 1].

    The raw score sum(w_i * a_i) is shifted by the worst attainable score
    (every penalty triggered, no reward earned) and divided by the score
    span sum(|w_i|), which is a min-max normalization. Permutation of the
    clause list does not change the result: numerator and denominator are
    integer sums, divided once at the end.
    """
    if not scored:
        raise EmptyRubricSet("cannot score an empty rubric set")
    seen: set[str] = set()
    numerator = 0
    denominator = 0
    for clause, decision in scored:
        if clause.id in seen:
            raise DuplicateDecision(clause.id)
        seen.add(clause.id)
        if decision is None or decision.clause_id != clause.id:
            raise MissingDecision(clause.id)
        numerator += clause.weight * decision.satisfied
        if clause.weight < 0:
            numerator -= clause.weight  # shift by the all-penalties floor
        denominator += abs(clause.weight)
    return numerator / denominator


class RubricSet:
    """Ordered clause collection with unique ids.

    Lifecycle mutation happens only through ``apply``; callers that tick the
    lifecycle concurrently with evaluation must serialize ``apply`` against
    readers. ``active`` returns a fresh list, so an evaluation in flight
    keeps a consistent snapshot.
    """

    def __init__(self, clauses: list[RubricClause] | None = None):
        self.clauses: list[RubricClause] = list(clauses or [])
        ids = [c.id for c in self.clauses]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate clause ids in rubric set")

    def __len__(self) -> int:
        return len(self.clauses)

    def active(self) -> list[RubricClause]:
        return [c for c in self.clauses if c.lifecycle is Lifecycle.ACTIVE]

    def get(self, clause_id: str) -> RubricClause:
        for clause in self.clauses:
            if clause.id == clause_id:
                return clause
        raise UnknownClause(clause_id)

    def apply(self, transitions: list["LifecycleTransition"]) -> None:
        by_id = {c.id: i for i, c in enumerate(self.clauses)}
        for tr in transitions:
            if tr.clause_id not in by_id:
                raise UnknownClause(tr.clause_id)
            i = by_id[tr.clause_id]
            self.clauses[i] = replace(self.clauses[i], lifecycle=tr.to_state)

    @classmethod
    def load(cls, path: str | Path) -> "RubricSet":
        clauses = []
        for rec in read_jsonl(path):
            clauses.append(
                RubricClause(
                    id=rec["id"],
                    text=rec["text"],
                    weight=int(rec["weight"]),
                    kind=ClauseKind(rec.get("kind", "core")),
                    lifecycle=Lifecycle(rec.get("lifecycle", "active")),
                )
            )
        return cls(clauses)

    def save(self, path: str | Path) -> None:
        write_jsonl(
            path,
            (
                {
                    "id": c.id,
                    "text": c.text,
                    "weight": c.weight,
                    "kind": c.kind.value,
                    "lifecycle": c.lifecycle.value,
                }
                for c in self.clauses
            ),
        )


# --- judge dispatch ---

class JudgeBackend(Protocol):
    judge_id: str

    def judge(self, prefix: str, suffix: str) -> str: ...


JUDGE_OUTPUT_SCHEMA = (
    "Reply with exactly one character: 1 if the clause is satisfied, 0 if not."
)
DIALOGUE_MARKER = "### Dialogue\n"
CLAUSE_MARKER = "### Clause\n"
_CLAUSE_ID_RE = re.compile(r"^\[([^\]]+)\]")


def build_judge_prompt(sample: str, clause: RubricClause) -> tuple[str, str]:
    """Render a judge call as a (shared prefix, clause suffix) pair.

    The prefix carries the judging instructions, the output schema, and the
    dialogue under review; only the suffix varies per clause. Calls for one
    sample can therefore be grouped by byte-identical prefix, which is a
    dispatch hint only and never changes results.
    """
    prefix = (
        "You audit one clinical dialogue against one rubric clause at a time.\n"
        f"{JUDGE_OUTPUT_SCHEMA}\n"
        f"{DIALOGUE_MARKER}{sample}\n"
        f"{CLAUSE_MARKER}"
    )
    suffix = f"[{clause.id}] {clause.text}"
    return prefix, suffix


def group_by_prefix(prompts: list[tuple[str, str]]) -> list[tuple[str, list[int]]]:
    """Group prompt indices by byte-identical prefix, preserving first-seen order."""
    groups: dict[str, list[int]] = {}
    for i, (prefix, _suffix) in enumerate(prompts):
        groups.setdefault(prefix, []).append(i)
    return list(groups.items())


def parse_judge_reply(reply: str, clause_id: str) -> int:
    text = reply.strip()
    if text == "1":
        return 1
    if text == "0":
        return 0
    raise JudgeMalformedOutput(clause_id, reply)


def evaluate_sample(
    sample: str,
    rubric_set: RubricSet,
    judge: JudgeBackend,
    parallelism: int = 8,
) -> tuple[list[JudgeDecision], float]:
    """Judge every active clause against the sample and aggregate the reward.

    One judge call per clause, dispatched in prefix groups with bounded
    parallelism. Retired and candidate clauses are never dispatched.
    """
    active = rubric_set.active()
    if not active:
        raise EmptyRubricSet("rubric set has no active clauses")
    prompts = [build_judge_prompt(sample, clause) for clause in active]
    decisions: list[JudgeDecision | None] = [None] * len(active)
    failures: dict[int, Exception] = {}

    def run_one(i: int) -> None:
        prefix, suffix = prompts[i]
        try:
            reply = judge.judge(prefix, suffix)
        except JudgeMalformedOutput:
            raise
        except Exception as exc:
            raise JudgeUnavailable(f"judge backend failed: {exc}") from exc
        satisfied = parse_judge_reply(reply, active[i].id)
        decisions[i] = JudgeDecision(
            clause_id=active[i].id,
            satisfied=satisfied,
            judge_id=getattr(judge, "judge_id", "unknown"),
        )

    workers = max(1, min(parallelism, len(active)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for _prefix, indices in group_by_prefix(prompts):
            futures = {i: pool.submit(run_one, i) for i in indices}
            for i, fut in futures.items():
                exc = fut.exception()
                if exc is not None:
                    failures[i] = exc  # type: ignore[assignment]
    if failures:
        raise failures[min(failures)]  # deterministic: lowest clause index wins

    pairs = [(clause, dec) for clause, dec in zip(active, decisions)]
    reward = score_rubrics(pairs)  # type: ignore[arg-type]
    return [d for d in decisions if d is not None], reward


# --- deterministic judge backends ---

class ConstantJudge:
    """Replies with a fixed string for every clause. Reply '1'/'0' makes a
    trivially satisfied/unsatisfied judge; anything else exercises the
    malformed-output path."""

    def __init__(self, reply: str = "1", judge_id: str = "constant-judge"):
        self.reply = reply
        self.judge_id = judge_id

    def judge(self, prefix: str, suffix: str) -> str:
        return self.reply


class KeywordJudge:
    """Rule-table judge: a clause is satisfied iff all of its configured
    phrases appear in the dialogue section of the prompt (case-insensitive).

    Clauses without a rule entry evaluate to the default reply.
    """

    def __init__(self, rules: dict[str, list[str]], default: str = "0",
                 judge_id: str = "keyword-judge"):
        self.rules = {k: [p.lower() for p in v] for k, v in rules.items()}
        self.default = default
        self.judge_id = judge_id

    def judge(self, prefix: str, suffix: str) -> str:
        match = _CLAUSE_ID_RE.match(suffix)
        if match is None:
            return self.default
        clause_id = match.group(1)
        if clause_id not in self.rules:
            return self.default
        dialogue = ""
        if DIALOGUE_MARKER in prefix:
            dialogue = prefix.split(DIALOGUE_MARKER, 1)[1]
            dialogue = dialogue.split(CLAUSE_MARKER, 1)[0]
        dialogue = dialogue.lower()
        ok = all(phrase in dialogue for phrase in self.rules[clause_id])
        return "1" if ok else "0"


# --- lifecycle ---

@dataclass(frozen=True)
class LifecyclePolicy:
    """Thresholds steering dynamic clause admission and retirement."""

    admission_threshold: float = 0.30
    exit_threshold: float = 0.02
    clean_epochs_to_retire: int = 3
    window_epochs: int = 8

    def __post_init__(self):
        if not 0.0 < self.admission_threshold <= 1.0:
            raise ValueError("admission threshold must be in (0, 1]")
        if not 0.0 <= self.exit_threshold < 1.0:
            raise ValueError("exit threshold must be in [0, 1)")
        if self.clean_epochs_to_retire < 1:
            raise ValueError("clean epoch count must be >= 1")


@dataclass(frozen=True)
class EpochCount:
    evaluations: int
    violations: int

    def __post_init__(self):
        if self.evaluations < 0 or self.violations < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.violations > self.evaluations:
            raise ValueError("violations cannot exceed evaluations")

    @property
    def rate(self) -> float:
        if self.evaluations == 0:
            return 0.0
        return self.violations / self.evaluations


class ViolationStats:
    """Ring of recent per-epoch violation counts for one clause.

    Epoch boundaries are explicit caller signals (``observe_epoch``), never
    wall-clock, so a replayed run transitions identically.
    """

    def __init__(self, clause_id: str, window_epochs: int = 8):
        self.clause_id = clause_id
        self.window: deque[EpochCount] = deque(maxlen=window_epochs)
        self.epochs_clean = 0

    def observe_epoch(self, evaluations: int, violations: int,
                      exit_threshold: float = 0.02) -> None:
        count = EpochCount(evaluations, violations)
        self.window.append(count)
        if count.rate <= exit_threshold:
            self.epochs_clean += 1
        else:
            self.epochs_clean = 0

    @property
    def current_rate(self) -> float:
        if not self.window:
            return 0.0
        return self.window[-1].rate


@dataclass(frozen=True)
class LifecycleTransition:
    clause_id: str
    from_state: Lifecycle
    to_state: Lifecycle


def lifecycle_tick(
    rubric_set: RubricSet,
    stats: list[ViolationStats],
    policy: LifecyclePolicy,
) -> list[LifecycleTransition]:
    """Compute lifecycle transitions from the latest violation statistics.

    Candidate clauses are promoted when the current-epoch violation rate
    reaches the admission threshold; active dynamic clauses retire once they
    have stayed at or under the exit threshold for enough consecutive
    epochs. Core clauses are exempt. Transitions are returned in stats
    order and are not applied; call ``RubricSet.apply`` to commit them.
    """
    transitions = []
    for record in stats:
        clause = rubric_set.get(record.clause_id)  # raises UnknownClause
        if clause.kind is ClauseKind.CORE:
            continue
        if clause.lifecycle is Lifecycle.CANDIDATE:
            if record.current_rate >= policy.admission_threshold:
                transitions.append(
                    LifecycleTransition(clause.id, Lifecycle.CANDIDATE, Lifecycle.ACTIVE)
                )
        elif clause.lifecycle is Lifecycle.ACTIVE:
            if record.epochs_clean >= policy.clean_epochs_to_retire:
                transitions.append(
                    LifecycleTransition(clause.id, Lifecycle.ACTIVE, Lifecycle.RETIRED)
                )
    return transitions
