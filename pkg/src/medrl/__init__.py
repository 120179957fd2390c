"""Reward, verification, and orchestration engine for multi-turn medical
dialogue RL, runnable entirely offline against deterministic backends."""

from .advantages import (
    GroupStats,
    InteractionStep,
    ViolationType,
    curriculum_demo,
    step_advantages,
    validity_factor,
    weighted_update_terms,
)
from .claims import (
    AtomicClaim,
    EmbeddingMatcher,
    ExtractionReport,
    RuleBasedExtractor,
    compare_extractions,
    extract_claims,
    split_sentences,
)
from .config import EngineConfig, Thresholds
from .distill import TokenLogProbs, clip_fkl_loss, grad_check, mopd_objective
from .embedding import HashEmbedder, cosine
from .evalmetrics import (
    ChecklistItem,
    DiagnosisCode,
    LabSelection,
    diagnosis_match,
    hallucination_rate,
    inquiry_coverage,
    lab_f1,
    turn_bin_report,
)
from .factcache import (
    CacheLevel,
    CacheStats,
    ClaimVerdict,
    TableVerifier,
    VerdictLabel,
    VerifyCache,
)
from .factreward import (
    ClaimCluster,
    FactRewardBreakdown,
    cluster_claims,
    fact_aware_reward,
    fact_penalty,
    gate_lambda,
    naive_reward,
)
from .patient import (
    InteractionMode,
    InjectionVariant,
    PatientCase,
    SessionView,
    build_session,
    respond,
    sample_mode,
)
from .pipeline import (
    Completed,
    ConsultPipeline,
    Discarded,
    Extended,
    StageContext,
    StagePool,
    StageType,
    advance,
    stage_instruction,
)
from .rubric import (
    JudgeDecision,
    LifecyclePolicy,
    RubricClause,
    RubricSet,
    ViolationStats,
    evaluate_sample,
    lifecycle_tick,
    score_rubrics,
)

__version__ = "0.1.0"
