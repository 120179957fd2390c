"""Staged consultation pipeline with quality-gated transitions.

A case moves through four fixed stages (inquiry, differential, lab
selection, diagnosis). Each stage appends the generated segment plus the
next stage's instruction to an append-only context, and the extended
context enters the next stage's pool only if the stage verifier scored the
segment at or above the gate threshold; everything else is discarded (and
logged for audit). Scheduling draws round-robin across the per-stage pools
so slots keep working on different stages of different cases in parallel.
"""
from __future__ import annotations

import hashlib
import random
import re
import threading
import zlib
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Protocol

from .errors import MissingInstruction, PolicyUnavailable, VerifierUnavailable
from .rubric import JudgeBackend, RubricSet, evaluate_sample

DEFAULT_GATE_TAU = 0.7


class StageType(Enum):
    INQ = 0
    DDX = 1
    LAB = 2
    DIAG = 3

    @property
    def next(self) -> "StageType | None":
        if self is StageType.DIAG:
            return None
        return StageType(self.value + 1)

    @property
    def label(self) -> str:
        return self.name.lower()


class Origin(str, Enum):
    INPUT = "input"
    GENERATED = "generated"
    INSTRUCTION = "instruction"


@dataclass(frozen=True)
class Segment:
    text: str
    origin: Origin


@dataclass(frozen=True)
class StageContext:
    """Append-only context for one case at one stage."""

    case_id: str
    stage: StageType
    history: tuple[Segment, ...]
    quality_score: float | None = None

    def rendered(self) -> str:
        return "\n".join(seg.text for seg in self.history)

    def extended_with(self, generated: str, instruction: str,
                      score: float) -> "StageContext":
        nxt = self.stage.next
        assert nxt is not None
        return StageContext(
            case_id=self.case_id,
            stage=nxt,
            history=self.history
            + (Segment(generated, Origin.GENERATED),
               Segment(instruction, Origin.INSTRUCTION)),
            quality_score=score,
        )


@dataclass(frozen=True)
class Extended:
    context: StageContext


@dataclass(frozen=True)
class Discarded:
    score: float
    context: StageContext  # pre-advance context, kept in full for audit


@dataclass(frozen=True)
class Completed:
    """Terminal outcome: the diagnosis stage generated its segment."""

    context: StageContext
    score: float


DEFAULT_STAGE_INSTRUCTIONS: dict[StageType, str] = {
    StageType.INQ: "Interview the patient to gather the missing history.",
    StageType.DDX: "From the history so far, list the differential diagnoses you are weighing.",
    StageType.LAB: "Given the differential, order the lab tests needed to narrow it.",
    StageType.DIAG: "Integrate all findings and state the single most likely diagnosis.",
}


def stage_instruction(stage: StageType,
                      instructions: Mapping[StageType, str]) -> str:
    if stage not in instructions or not instructions[stage]:
        raise MissingInstruction(stage)
    return instructions[stage]


class PolicyBackend(Protocol):
    def generate(self, context: str) -> str: ...


class StageVerifier(Protocol):
    def score(self, ctx: StageContext, response: str) -> float: ...


def advance(
    ctx: StageContext,
    policy: PolicyBackend,
    verifier: StageVerifier,
    tau: float,
    instructions: Mapping[StageType, str],
) -> Extended | Discarded | Completed:
    """Generate the current stage's segment, score it, and gate the transition.

    Diagnosis-stage contexts are terminal and complete regardless of score;
    earlier stages extend only when score >= tau.
    """
    try:
        generated = policy.generate(ctx.rendered())
    except Exception as exc:
        raise PolicyUnavailable(f"policy backend failed: {exc}") from exc
    try:
        score = float(verifier.score(ctx, generated))
    except Exception as exc:
        raise VerifierUnavailable(f"stage verifier failed: {exc}") from exc

    if ctx.stage is StageType.DIAG:
        terminal = StageContext(
            case_id=ctx.case_id,
            stage=StageType.DIAG,
            history=ctx.history + (Segment(generated, Origin.GENERATED),),
            quality_score=score,
        )
        return Completed(terminal, score)
    if score >= tau:
        nxt = ctx.stage.next
        assert nxt is not None
        instruction = stage_instruction(nxt, instructions)
        return Extended(ctx.extended_with(generated, instruction, score))
    return Discarded(score, ctx)


class StagePool:
    """Per-stage FIFO queues with a gate assertion on every enqueue."""

    def __init__(self, gate_tau: float | Mapping[StageType, float] | None = None):
        self._queues: dict[StageType, deque[StageContext]] = {
            s: deque() for s in StageType
        }
        self._rotation = 0
        self._lock = threading.Lock()
        self.gate_tau = gate_tau

    def _tau_for(self, produced_by: StageType) -> float | None:
        if self.gate_tau is None:
            return None
        if isinstance(self.gate_tau, Mapping):
            return self.gate_tau.get(produced_by)
        return float(self.gate_tau)

    def enqueue(self, ctx: StageContext) -> None:
        with self._lock:
            if ctx.quality_score is not None and ctx.stage.value > 0:
                produced_by = StageType(ctx.stage.value - 1)
                tau = self._tau_for(produced_by)
                if tau is not None and ctx.quality_score < tau:
                    raise ValueError(
                        f"gate violation: {ctx.case_id} enqueued into "
                        f"{ctx.stage.label} with score {ctx.quality_score} < {tau}"
                    )
            self._queues[ctx.stage].append(ctx)

    def schedule_batch(self, slots: int) -> list[StageContext]:
        """Draw up to ``slots`` contexts, round-robin over nonempty stages,
        FIFO within a stage. An empty pool yields an empty batch."""
        if slots < 1:
            raise ValueError("slots must be >= 1")
        batch: list[StageContext] = []
        with self._lock:
            while len(batch) < slots:
                picked = False
                for k in range(len(StageType)):
                    stage = StageType((self._rotation + k) % len(StageType))
                    if self._queues[stage]:
                        batch.append(self._queues[stage].popleft())
                        self._rotation = (stage.value + 1) % len(StageType)
                        picked = True
                        break
                if not picked:
                    break
        return batch

    def pending(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._queues.values())

    def counts(self) -> dict[str, int]:
        with self._lock:
            return {s.label: len(q) for s, q in self._queues.items()}


@dataclass
class PipelineStats:
    injected: int = 0
    completed: int = 0
    discarded: int = 0

    def in_flight(self, pool: StagePool) -> int:
        return pool.pending()

    def balanced(self, pool: StagePool) -> bool:
        return self.completed + self.discarded + pool.pending() == self.injected


class ConsultPipeline:
    """Drives cases through all stages using the configured backends.

    Discarded trajectories are retried up to ``max_retries`` times per
    (case, stage), then abandoned; every discard is logged with its full
    context either way.
    """

    def __init__(
        self,
        policy: PolicyBackend,
        verifier: StageVerifier,
        instructions: Mapping[StageType, str] | None = None,
        tau: float = DEFAULT_GATE_TAU,
        stage_tau: Mapping[StageType, float] | None = None,
        max_retries: int = 0,
    ):
        self.policy = policy
        self.verifier = verifier
        self.instructions = dict(instructions or DEFAULT_STAGE_INSTRUCTIONS)
        self.tau = tau
        self.stage_tau = dict(stage_tau or {})
        self.max_retries = max_retries
        gate = {s: self.tau_for(s) for s in StageType}
        self.pool = StagePool(gate_tau=gate)
        self.stats = PipelineStats()
        self.completed: list[Completed] = []
        self.discard_log: list[Discarded] = []
        self._attempts: dict[tuple[str, StageType], int] = {}

    def tau_for(self, stage: StageType) -> float:
        return self.stage_tau.get(stage, self.tau)

    def inject_case(self, case_id: str, intake: str) -> StageContext:
        ctx = StageContext(
            case_id=case_id,
            stage=StageType.INQ,
            history=(
                Segment(intake, Origin.INPUT),
                Segment(stage_instruction(StageType.INQ, self.instructions),
                        Origin.INSTRUCTION),
            ),
        )
        self.pool.enqueue(ctx)
        self.stats.injected += 1
        return ctx

    def step_batch(self, slots: int = 4) -> int:
        """Advance one scheduled batch; returns how many contexts moved."""
        batch = self.pool.schedule_batch(slots)
        for ctx in batch:
            result = advance(ctx, self.policy, self.verifier,
                             self.tau_for(ctx.stage), self.instructions)
            if isinstance(result, Extended):
                self.pool.enqueue(result.context)
            elif isinstance(result, Completed):
                self.completed.append(result)
                self.stats.completed += 1
            else:
                self.discard_log.append(result)
                key = (ctx.case_id, ctx.stage)
                attempts = self._attempts.get(key, 0)
                if attempts < self.max_retries:
                    self._attempts[key] = attempts + 1
                    self.pool.enqueue(ctx)  # regenerate from the same context
                else:
                    self.stats.discarded += 1
        return len(batch)

    def run(self, slots: int = 4) -> PipelineStats:
        while self.step_batch(slots):
            pass
        return self.stats


# --- verifier backends ---

@dataclass
class FixedScoreVerifier:
    score_value: float = 1.0

    def score(self, ctx: StageContext, response: str) -> float:
        return self.score_value


@dataclass
class SeededStageVerifier:
    """Deterministic stand-in: the score is a pure function of the case id,
    the stage, and the base seed. The default range passes most gates at
    tau 0.7 while still exercising the discard path."""

    base_seed: int = 0
    low: float = 0.6
    high: float = 1.0

    def score(self, ctx: StageContext, response: str) -> float:
        key = f"{self.base_seed}:{ctx.case_id}:{ctx.stage.label}"
        rng = random.Random(zlib.crc32(key.encode("utf-8")))
        return self.low + (self.high - self.low) * rng.random()


@dataclass
class RubricStageVerifier:
    """Scores a stage segment by judging it against the stage's rubric set."""

    rubric_sets: Mapping[StageType, RubricSet]
    judge: JudgeBackend
    parallelism: int = 8

    def score(self, ctx: StageContext, response: str) -> float:
        rubric_set = self.rubric_sets.get(ctx.stage)
        if rubric_set is None:
            raise VerifierUnavailable(f"no rubric set for stage {ctx.stage.label}")
        sample = f"{ctx.rendered()}\n{response}"
        _decisions, reward = evaluate_sample(
            sample, rubric_set, self.judge, parallelism=self.parallelism
        )
        return reward


# --- policy backends ---

class StubPolicy:
    """Emits a short deterministic segment derived from the context digest."""

    def generate(self, context: str) -> str:
        digest = hashlib.blake2b(context.encode("utf-8"), digest_size=4).hexdigest()
        return f"segment-{digest}"


@dataclass
class ScriptedConsultPolicy:
    """Deterministic consultation script over a generated case record.

    The emitted text carries machine-readable markers (ASK/DDX/ORDER/
    DIAGNOSIS lines) that the evaluation adapter parses back out, so a full
    pipeline run can be scored without any model in the loop. The stage is
    recognized from the instruction the context ends with.
    """

    case: dict
    seed: int = 0
    instructions: Mapping[StageType, str] = field(
        default_factory=lambda: dict(DEFAULT_STAGE_INSTRUCTIONS)
    )
    ask_fraction: float = 0.75

    def _rng(self, stage: StageType) -> random.Random:
        key = f"{self.seed}:{self.case['case_id']}:{stage.label}"
        return random.Random(zlib.crc32(key.encode("utf-8")))

    def _detect_stage(self, context: str) -> StageType:
        tail = context.rstrip()
        for stage, instruction in self.instructions.items():
            if tail.endswith(instruction.strip()):
                return stage
        raise ValueError("context does not end with a known stage instruction")

    def generate(self, context: str) -> str:
        stage = self._detect_stage(context)
        rng = self._rng(stage)
        if stage is StageType.INQ:
            lines = []
            for item in self.case["checklist"]:
                if rng.random() < self.ask_fraction:
                    lines.append(f"ASK {item['id']}")
            lines.append("History gathered on the points above.")
            return "\n".join(lines)
        if stage is StageType.DDX:
            codes = [self.case["truth_icd"]] + list(self.case.get("ddx_decoys", []))
            return "\n".join(f"DDX {code}" for code in codes[:3])
        if stage is StageType.LAB:
            lines = []
            for test in self.case["essential_tests"]:
                if rng.random() < 0.85:
                    lines.append(f"ORDER {test}")
            for test in self.case["optional_tests"]:
                if rng.random() < 0.5:
                    lines.append(f"ORDER {test}")
            for test in self.case.get("decoy_tests", []):
                if rng.random() < 0.1:
                    lines.append(f"ORDER {test}")
            return "\n".join(lines) if lines else "ORDER blood_routine"
        # diagnosis stage: mostly the truth, sometimes a degraded neighbor
        return f"DIAGNOSIS {sample_prediction(self.case['truth_icd'], rng)}"


@dataclass
class CaseRoutingPolicy:
    """Dispatches generation to a per-case scripted policy by reading the
    case id off the intake line (``Case <id>: ...``)."""

    policies: dict[str, "ScriptedConsultPolicy"]

    _CASE_RE = re.compile(r"^Case ([^:]+):")

    def generate(self, context: str) -> str:
        match = self._CASE_RE.match(context)
        if match is None or match.group(1) not in self.policies:
            raise ValueError("context does not identify a known case")
        return self.policies[match.group(1)].generate(context)


def same_category_variant(code: str) -> str:
    head = code[:3]
    sub = code[4:] if len(code) > 4 else ""
    new_sub = "0" if sub != "0" else "1"
    return f"{head}.{new_sub}"


def same_chapter_variant(code: str) -> str:
    digits = int(code[1:3])
    return f"{code[0]}{(digits + 7) % 100:02d}.1"


def off_chapter_variant(code: str) -> str:
    letter = "K" if code[0] != "K" else "J"
    return f"{letter}35.2"


def sample_prediction(truth: str, rng: random.Random) -> str:
    """Draw a diagnosis prediction: usually the truth, otherwise a neighbor
    degraded by one hierarchy tier."""
    draw = rng.random()
    if draw < 0.70:
        return truth
    if draw < 0.85:
        return same_category_variant(truth)
    if draw < 0.95:
        return same_chapter_variant(truth)
    return off_chapter_variant(truth)


def eval_record_from_context(ctx: StageContext) -> dict:
    """Parse the ASK/ORDER/DIAGNOSIS markers out of a finished trajectory
    into the evaluation record shape shared with the simulator harness."""
    asks: list[str] = []
    orders: list[str] = []
    diagnosis = None
    for seg in ctx.history:
        if seg.origin is not Origin.GENERATED:
            continue
        for line in seg.text.splitlines():
            if line.startswith("ASK "):
                asks.append(line[4:].strip())
            elif line.startswith("ORDER "):
                orders.append(line[6:].strip())
            elif line.startswith("DIAGNOSIS "):
                diagnosis = line[10:].strip()
    return {
        "case_id": ctx.case_id,
        "mode": "pipeline",
        "variant": None,
        "turn_count": len(asks),
        "fact_ids": asks,
        "selected_tests": sorted(set(orders)),
        "predicted_icd": diagnosis,
    }


def trajectory_record(ctx: StageContext, score: float | None = None,
                      outcome: str = "completed") -> dict:
    """Flatten a context into the line-delimited trajectory export shape."""
    return {
        "case_id": ctx.case_id,
        "stage": ctx.stage.label,
        "outcome": outcome,
        "score": score if score is not None else ctx.quality_score,
        "history": [
            {"text": seg.text, "origin": seg.origin.value} for seg in ctx.history
        ],
    }
