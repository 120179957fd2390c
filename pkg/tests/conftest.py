"""Shared deterministic doubles for the test suite."""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from medrl.rubric import CLAUSE_MARKER, DIALOGUE_MARKER


@dataclass
class RecordingJudge:
    """Wraps another judge and captures every (prefix, suffix) call."""

    inner: object
    calls: list[tuple[str, str]] = field(default_factory=list)
    judge_id: str = "recording-judge"

    def judge(self, prefix: str, suffix: str) -> str:
        self.calls.append((prefix, suffix))
        return self.inner.judge(prefix, suffix)


class FailingJudge:
    judge_id = "failing-judge"

    def judge(self, prefix: str, suffix: str) -> str:
        raise ConnectionError("judge endpoint is down")


@dataclass
class MappingEmbedder:
    """Embedder with hand-constructed unit vectors per exact text."""

    table: dict[str, np.ndarray]
    dim: int = 4

    def embed(self, text: str) -> np.ndarray:
        if text in self.table:
            return np.asarray(self.table[text], dtype=np.float64)
        vec = np.zeros(self.dim)
        vec[0] = 1.0
        return vec


@dataclass
class SlowVerifier:
    """Blocks long enough for concurrent lookups to pile up."""

    delay: float = 0.15
    label: str = "supported"
    calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def verify(self, claim_text: str):
        with self._lock:
            self.calls += 1
        time.sleep(self.delay)
        return self.label, None


class FailingVerifier:
    def verify(self, claim_text: str):
        raise ConnectionError("search agent unreachable")


def dialogue_of(prefix: str) -> str:
    return prefix.split(DIALOGUE_MARKER, 1)[1].split(CLAUSE_MARKER, 1)[0]


@pytest.fixture
def unit_vectors():
    """Two unit vectors at cosine exactly 0.97, plus an orthogonal one."""
    v1 = np.zeros(4)
    v1[0] = 1.0
    v2 = np.zeros(4)
    v2[0] = 0.97
    v2[1] = float(np.sqrt(1.0 - 0.97**2))
    v3 = np.zeros(4)
    v3[2] = 1.0
    return v1, v2, v3
