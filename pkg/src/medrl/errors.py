"""Exception types shared across the engine."""
from __future__ import annotations


class EngineError(Exception):
    """Base class for every error raised by this package."""


# --- rubric scoring and lifecycle ---

class EmptyRubricSet(EngineError):
    pass


class MissingDecision(EngineError):
    def __init__(self, clause_id: str):
        super().__init__(f"no judge decision for clause {clause_id!r}")
        self.clause_id = clause_id


class DuplicateDecision(EngineError):
    def __init__(self, clause_id: str):
        super().__init__(f"multiple decisions for clause {clause_id!r}")
        self.clause_id = clause_id


class JudgeUnavailable(EngineError):
    pass


class JudgeMalformedOutput(EngineError):
    def __init__(self, clause_id: str, reply: str = ""):
        super().__init__(
            f"judge reply for clause {clause_id!r} is neither '0' nor '1': {reply!r}"
        )
        self.clause_id = clause_id
        self.reply = reply


class UnknownClause(EngineError):
    def __init__(self, clause_id: str):
        super().__init__(f"unknown clause {clause_id!r}")
        self.clause_id = clause_id


# --- claim extraction ---

class ExtractorUnavailable(EngineError):
    pass


class ExtractorMalformedOutput(EngineError):
    pass


class EmptyReference(EngineError):
    pass


# --- claim verification cache ---

class VerifierUnavailable(EngineError):
    pass


class EmbeddingDimensionMismatch(EngineError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"embedding dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


# --- fact-aware reward ---

class InvalidThresholds(EngineError):
    pass


class ZeroClaims(EngineError):
    pass


# --- advantage estimation ---

class GroupTooSmall(EngineError):
    pass


class LengthMismatch(EngineError):
    pass


# --- distillation losses ---

class EmptyMask(EngineError):
    pass


# --- consultation pipeline ---

class PolicyUnavailable(EngineError):
    pass


class MissingInstruction(EngineError):
    def __init__(self, stage: object):
        super().__init__(f"no instruction configured for stage {stage}")
        self.stage = stage


# --- patient simulator ---

class SnippetMissing(EngineError):
    pass


# --- evaluation metrics ---

class EmptyChecklist(EngineError):
    pass


class InvalidCode(EngineError):
    def __init__(self, code: str):
        super().__init__(f"not a valid ICD-10 code: {code!r}")
        self.code = code


# --- service / configuration ---

class ConfigInvalid(EngineError):
    pass


class PortUnavailable(EngineError):
    pass
