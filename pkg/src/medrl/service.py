"""HTTP service exposing the reward, advantage, pipeline, simulator, and
cache surfaces.

Every request and response is a self-describing record with a
schema_version field and an echoed request id; independent requests are
handled concurrently, so responses may complete out of submission order and
callers correlate by id. Work for a request starts on receipt.
"""
from __future__ import annotations

from typing import Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .advantages import InteractionStep, build_taxonomy, step_advantages, violations_from_names
from .backends import Backends, resolve_backends
from .claims import AtomicClaim, split_sentences
from .config import EngineConfig
from .errors import (
    EngineError,
    JudgeUnavailable,
    PolicyUnavailable,
    VerifierUnavailable,
)
from .factcache import VerdictLabel, VerifyCache
from .factreward import cluster_claims, fact_aware_reward
from .pipeline import (
    Completed,
    Extended,
    Origin,
    RubricStageVerifier,
    SeededStageVerifier,
    Segment,
    StageContext,
    StageType,
    advance,
)
from .patient import PatientCase, SessionView, respond
from .records import SCHEMA_VERSION
from .rubric import ClauseKind, Lifecycle, RubricClause, RubricSet, evaluate_sample

_BACKEND_FAULTS = (JudgeUnavailable, VerifierUnavailable, PolicyUnavailable)


class ClauseModel(BaseModel):
    id: str
    text: str
    weight: int
    kind: Literal["core", "dynamic"] = "core"
    lifecycle: Literal["candidate", "active", "retired"] = "active"


class RubricRewardRequest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    request_id: str
    sample: str
    clauses: list[ClauseModel] = Field(min_length=1)


class VerdictModel(BaseModel):
    claim_text: str
    label: Literal["supported", "refuted", "uncertain"]


class FactRewardRequest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    request_id: str
    response_text: str
    r_task: float
    verdicts: list[VerdictModel] = Field(default_factory=list)


class StepModel(BaseModel):
    index: int
    user_turn: str = ""
    assistant_turn: str = ""
    violations: list[str] = Field(default_factory=list)


class RolloutModel(BaseModel):
    r_global: float
    steps: list[StepModel]


class AdvantageRequest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    request_id: str
    rollouts: list[RolloutModel] = Field(min_length=2)


class SegmentModel(BaseModel):
    text: str
    origin: Literal["input", "generated", "instruction"]


class PipelineStepRequest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    request_id: str
    case_id: str
    stage: Literal["inq", "ddx", "lab", "diag"]
    history: list[SegmentModel] = Field(min_length=1)
    tau: float | None = None


class SessionModel(BaseModel):
    physician_view: list[list[str]] = Field(default_factory=list)
    simulator_view: list[list[str]] = Field(default_factory=list)
    injected: list[list[str]] = Field(default_factory=list)


class SimTurnRequest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    request_id: str
    case: dict
    physician_utterance: str
    session: SessionModel = Field(default_factory=SessionModel)


def create_app(
    config: EngineConfig | None = None,
    backends: Backends | None = None,
) -> FastAPI:
    config = config or EngineConfig()
    config.validate()
    backends = backends or resolve_backends(config)
    app = FastAPI(title="medrl", version="0.1.0")
    app.state.config = config
    app.state.backends = backends
    app.state.cache = VerifyCache(
        embedder=backends.embedder,
        verifier=backends.verifier,
        theta_sem=config.thresholds.semantic_cache,
        persist_dir=config.cache_dir,
    )
    if config.stage_rubrics:
        rubric_sets = {
            StageType[stage.upper()]: RubricSet.load(path)
            for stage, path in config.stage_rubrics.items()
        }
        app.state.stage_verifier = RubricStageVerifier(rubric_sets, backends.judge)
    else:
        app.state.stage_verifier = SeededStageVerifier(base_seed=config.seed)

    @app.exception_handler(RequestValidationError)
    async def bad_payload(request: Request, exc: RequestValidationError):
        # malformed payloads are client errors with field-level detail
        return JSONResponse(
            status_code=400,
            content={"error": "validation", "detail": exc.errors()},
        )

    @app.exception_handler(EngineError)
    async def engine_error(request: Request, exc: EngineError):
        status = 502 if isinstance(exc, _BACKEND_FAULTS) else 400
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(ValueError)
    async def value_error(request: Request, exc: ValueError):
        return JSONResponse(
            status_code=400, content={"error": "ValueError", "detail": str(exc)}
        )

    @app.get("/healthz", response_class=PlainTextResponse)
    def healthz() -> str:
        return "ok"

    @app.post("/v1/reward/rubric")
    def reward_rubric(req: RubricRewardRequest) -> dict:
        clauses = [
            RubricClause(
                id=c.id,
                text=c.text,
                weight=c.weight,
                kind=ClauseKind(c.kind),
                lifecycle=Lifecycle(c.lifecycle),
            )
            for c in req.clauses
        ]
        rubric_set = RubricSet(clauses)
        decisions, reward = evaluate_sample(
            req.sample, rubric_set, backends.judge,
            parallelism=config.judge_parallelism,
        )
        return {
            "schema_version": SCHEMA_VERSION,
            "request_id": req.request_id,
            "decisions": [
                {"clause_id": d.clause_id, "satisfied": d.satisfied,
                 "judge_id": d.judge_id}
                for d in decisions
            ],
            "task_reward": reward,
        }

    @app.post("/v1/reward/fact")
    def reward_fact(req: FactRewardRequest) -> dict:
        claims = [
            AtomicClaim(text=v.claim_text, source_span=(i, i + 1), order_index=i)
            for i, v in enumerate(req.verdicts)
        ]
        labels = [VerdictLabel(v.label) for v in req.verdicts]
        clusters = cluster_claims(
            claims, labels, split_sentences(req.response_text),
            backends.embedder, threshold=config.thresholds.claim_cluster,
        )
        breakdown = fact_aware_reward(
            req.r_task, clusters,
            tau_min=config.thresholds.gate_tau_min,
            tau_max=config.thresholds.gate_tau_max,
            kappa=config.thresholds.gate_kappa,
            eps=config.thresholds.fact_eps,
        )
        return {
            "schema_version": SCHEMA_VERSION,
            "request_id": req.request_id,
            **breakdown.as_record(),
        }

    @app.post("/v1/advantage/spar")
    def advantage_spar(req: AdvantageRequest) -> dict:
        taxonomy = build_taxonomy(config.violation_taxonomy)
        group = [r.r_global for r in req.rollouts]
        rollouts = []
        for rollout in req.rollouts:
            steps = [
                InteractionStep(
                    index=s.index,
                    user_turn=s.user_turn,
                    assistant_turn=s.assistant_turn,
                    violations=violations_from_names(s.violations, taxonomy),
                )
                for s in rollout.steps
            ]
            advantages = step_advantages(
                steps, rollout.r_global, group,
                eps=config.thresholds.advantage_eps,
            )
            rollouts.append(
                {"r_global": rollout.r_global, "advantages": advantages}
            )
        return {
            "schema_version": SCHEMA_VERSION,
            "request_id": req.request_id,
            "rollouts": rollouts,
        }

    @app.post("/v1/pipeline/step")
    def pipeline_step(req: PipelineStepRequest) -> dict:
        ctx = StageContext(
            case_id=req.case_id,
            stage=StageType[req.stage.upper()],
            history=tuple(
                Segment(s.text, Origin(s.origin)) for s in req.history
            ),
        )
        tau = req.tau if req.tau is not None else config.thresholds.stage_gate_tau
        result = advance(
            ctx, backends.policy, app.state.stage_verifier, tau,
            config.instructions_by_stage(),
        )
        if isinstance(result, Extended):
            outcome, score, out_ctx = "extended", result.context.quality_score, result.context
        elif isinstance(result, Completed):
            outcome, score, out_ctx = "completed", result.score, result.context
        else:
            outcome, score, out_ctx = "discarded", result.score, result.context
        return {
            "schema_version": SCHEMA_VERSION,
            "request_id": req.request_id,
            "outcome": outcome,
            "score": score,
            "context": {
                "case_id": out_ctx.case_id,
                "stage": out_ctx.stage.label,
                "quality_score": out_ctx.quality_score,
                "history": [
                    {"text": seg.text, "origin": seg.origin.value}
                    for seg in out_ctx.history
                ],
            },
        }

    @app.post("/v1/sim/turn")
    def sim_turn(req: SimTurnRequest) -> dict:
        case = PatientCase.from_record(req.case)
        session = SessionView(
            physician_view=[tuple(t) for t in req.session.physician_view],
            simulator_view=[tuple(t) for t in req.session.simulator_view],
            injected=tuple(tuple(t) for t in req.session.injected),
        )
        before = len(session.disclosed_fact_ids)
        reply = respond(case, session, req.physician_utterance)
        session.check_asymmetry()
        return {
            "schema_version": SCHEMA_VERSION,
            "request_id": req.request_id,
            "patient_utterance": reply,
            "fact_ids": session.disclosed_fact_ids[before:],
            "session": {
                "physician_view": [list(t) for t in session.physician_view],
                "simulator_view": [list(t) for t in session.simulator_view],
                "injected": [list(t) for t in session.injected],
            },
        }

    @app.get("/v1/cache/stats")
    def cache_stats() -> dict:
        stats = app.state.cache.cache_stats()
        return {
            "schema_version": SCHEMA_VERSION,
            "lookups": stats.lookups,
            "l1_hits": stats.l1_hits,
            "l2_hits": stats.l2_hits,
            "external_calls": stats.external_calls,
            "hit_rate": stats.hit_rate,
        }

    return app


def serve(config: EngineConfig, host: str = "127.0.0.1", port: int = 8080) -> None:
    """Run the service until interrupted."""
    import uvicorn

    from .errors import PortUnavailable

    try:
        uvicorn.run(create_app(config), host=host, port=port, log_level="warning")
    except OSError as exc:
        raise PortUnavailable(f"cannot bind {host}:{port}: {exc}") from exc
