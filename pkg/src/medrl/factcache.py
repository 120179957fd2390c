"""Two-level claim verification cache.

Verdict lookups consult an exact-string store first, then a semantic
nearest-neighbor index over claim embeddings; only on a miss at both levels
is the external verification backend called, and the result is written back
to both levels. The point of the design is that sampled responses to the
same query share most of their underlying claims, so external calls drop
sharply as the pool warms up.

Concurrency: lookups are safe from multiple threads. Stats and store
mutations are serialized under one lock, and identical claim texts in
flight coalesce onto a single external call. Failed verifications leave the
claim unverified and are not counted in the stats, which keeps the
conservation identity (l1 + l2 + external == lookups) true after every
operation.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np

from .claims import AtomicClaim
from .embedding import EmbeddingBackend, HashEmbedder, numeric_tokens
from .errors import EmbeddingDimensionMismatch, VerifierUnavailable
from .records import dumps_record, read_jsonl


class VerdictLabel(str, Enum):
    SUPPORTED = "supported"
    REFUTED = "refuted"
    UNCERTAIN = "uncertain"


@dataclass(frozen=True)
class Provenance:
    """Where a verdict came from: exact store, semantic neighbor, or backend."""

    source: str  # "l1_exact" | "l2_semantic" | "external"
    similarity: float | None = None

    def __post_init__(self):
        if self.source not in ("l1_exact", "l2_semantic", "external"):
            raise ValueError(f"unknown provenance source {self.source!r}")
        if self.source == "l2_semantic" and self.similarity is None:
            raise ValueError("semantic provenance requires a similarity value")

    @classmethod
    def l1(cls) -> "Provenance":
        return cls("l1_exact")

    @classmethod
    def l2(cls, similarity: float) -> "Provenance":
        return cls("l2_semantic", similarity)

    @classmethod
    def external(cls) -> "Provenance":
        return cls("external")


@dataclass(frozen=True)
class ClaimVerdict:
    claim_text: str
    label: VerdictLabel
    provenance: Provenance
    evidence_note: str | None = None


@dataclass(frozen=True)
class FailedVerification:
    """Per-claim failure marker returned from batch verification."""

    claim_text: str
    reason: str


@dataclass
class CacheStats:
    lookups: int = 0
    l1_hits: int = 0
    l2_hits: int = 0
    external_calls: int = 0

    @property
    def hit_rate(self) -> float:
        if self.lookups == 0:
            return 0.0
        return (self.l1_hits + self.l2_hits) / self.lookups

    def check_identity(self) -> None:
        if self.l1_hits + self.l2_hits + self.external_calls != self.lookups:
            raise AssertionError(f"cache stats out of balance: {self}")

    def snapshot(self) -> "CacheStats":
        return CacheStats(self.lookups, self.l1_hits, self.l2_hits, self.external_calls)


class VerifierBackend(Protocol):
    def verify(self, claim_text: str) -> tuple[str, str | None]: ...


@dataclass
class TableVerifier:
    """Deterministic verifier keyed by a ground-truth table; stands in for
    the search-backed agent in tests and CLI runs."""

    truth: dict[str, str] = field(default_factory=dict)
    default_label: str = VerdictLabel.UNCERTAIN.value
    notes: dict[str, str] = field(default_factory=dict)
    calls: int = 0

    def verify(self, claim_text: str) -> tuple[str, str | None]:
        self.calls += 1
        label = self.truth.get(claim_text, self.default_label)
        return label, self.notes.get(claim_text)


class CacheLevel(str, Enum):
    L1 = "l1"
    L2 = "l2"
    BOTH = "both"


class VectorIndex(Protocol):
    """Nearest-neighbor index contract; swap in an approximate index here
    once exact scan stops being fast enough."""

    def add(self, key: str, vec: np.ndarray) -> None: ...

    def nearest(self, vec: np.ndarray) -> tuple[str, float] | None: ...

    def clear(self) -> None: ...

    def __len__(self) -> int: ...

    def items(self) -> list[tuple[str, np.ndarray]]: ...


class ExactVectorIndex:
    """Brute-force cosine index over unit vectors; correct and cheap at
    desk scale. Ties resolve to the earliest insertion."""

    def __init__(self, dim: int, capacity: int = 16):
        self.dim = dim
        self._matrix = np.zeros((capacity, dim), dtype=np.float64)
        self._keys: list[str] = []

    def __len__(self) -> int:
        return len(self._keys)

    def add(self, key: str, vec: np.ndarray) -> None:
        n = len(self._keys)
        if n == self._matrix.shape[0]:
            grown = np.zeros((n * 2, self.dim), dtype=np.float64)
            grown[:n] = self._matrix[:n]
            self._matrix = grown
        self._matrix[n] = vec
        self._keys.append(key)

    def nearest(self, vec: np.ndarray) -> tuple[str, float] | None:
        n = len(self._keys)
        if n == 0:
            return None
        sims = self._matrix[:n] @ vec
        best = int(np.argmax(sims))
        return self._keys[best], float(sims[best])

    def clear(self) -> None:
        self._keys = []
        self._matrix = np.zeros((16, self.dim), dtype=np.float64)

    def items(self) -> list[tuple[str, np.ndarray]]:
        return [(key, self._matrix[i].copy()) for i, key in enumerate(self._keys)]


_L1_FILE = "l1.jsonl"
_L2_FILE = "l2.jsonl"


class VerifyCache:
    """Exact + semantic claim verdict cache in front of a verifier backend."""

    def __init__(
        self,
        embedder: EmbeddingBackend | None = None,
        verifier: VerifierBackend | None = None,
        theta_sem: float = 0.95,
        numeric_guard: bool = True,
        persist_dir: str | Path | None = None,
        bypass: bool = False,
    ):
        if not 0.0 < theta_sem <= 1.0:
            raise ValueError("semantic threshold must be in (0, 1]")
        self.embedder = embedder if embedder is not None else HashEmbedder()
        self.verifier = verifier if verifier is not None else TableVerifier()
        self.theta_sem = theta_sem
        self.numeric_guard = numeric_guard
        self.bypass = bypass  # skip both levels; baseline for reduction studies
        self._dim = int(getattr(self.embedder, "dim", 64))

        self._lock = threading.Lock()
        self._l1: dict[str, tuple[VerdictLabel, str | None]] = {}
        self._l2: VectorIndex = ExactVectorIndex(self._dim)
        self._inflight: dict[str, threading.Event] = {}
        self._stats = CacheStats()

        self._persist_dir = Path(persist_dir) if persist_dir else None
        if self._persist_dir is not None:
            self._persist_dir.mkdir(parents=True, exist_ok=True)
            self._load()

    # --- public api ---

    def verify_claim(self, claim: AtomicClaim | str) -> ClaimVerdict:
        """Resolve one claim through L1, then L2, then the external backend."""
        text = claim.text if isinstance(claim, AtomicClaim) else str(claim)
        if self.bypass:
            label, note = self._call_verifier(text)
            with self._lock:
                self._stats.lookups += 1
                self._stats.external_calls += 1
                self._stats.check_identity()
            return ClaimVerdict(text, label, Provenance.external(), note)

        with self._lock:
            hit = self._l1_lookup_locked(text)
            if hit is not None:
                return hit
        vec = self._embed(text)

        while True:
            with self._lock:
                hit = self._l1_lookup_locked(text)
                if hit is not None:
                    return hit
                hit = self._l2_lookup_locked(text, vec)
                if hit is not None:
                    return hit
                event = self._inflight.get(text)
                if event is None:
                    event = threading.Event()
                    self._inflight[text] = event
                    break
            # someone else is verifying this exact text; reuse their result
            event.wait()

        try:
            label, note = self._call_verifier(text)
        except BaseException:
            with self._lock:
                self._inflight.pop(text, None)
            event.set()
            raise
        with self._lock:
            self._store_locked(text, vec, label, note)
            self._stats.lookups += 1
            self._stats.external_calls += 1
            self._stats.check_identity()
            self._inflight.pop(text, None)
        event.set()
        return ClaimVerdict(text, label, Provenance.external(), note)

    def verify_batch(
        self, claims: list[AtomicClaim | str]
    ) -> list[ClaimVerdict | FailedVerification]:
        """Order-preserving batch verification; failures are reported per
        claim instead of aborting the batch. Duplicate texts inside one
        batch resolve against the entry stored by their first occurrence."""
        results: list[ClaimVerdict | FailedVerification] = []
        for claim in claims:
            text = claim.text if isinstance(claim, AtomicClaim) else str(claim)
            try:
                results.append(self.verify_claim(claim))
            except (VerifierUnavailable, EmbeddingDimensionMismatch) as exc:
                results.append(FailedVerification(text, str(exc)))
        return results

    def cache_stats(self) -> CacheStats:
        with self._lock:
            return self._stats.snapshot()

    def cache_flush(self, level: CacheLevel = CacheLevel.BOTH) -> None:
        """Empty the named level(s). Telemetry counters are not reset."""
        with self._lock:
            if level in (CacheLevel.L1, CacheLevel.BOTH):
                self._l1.clear()
                self._truncate(_L1_FILE)
            if level in (CacheLevel.L2, CacheLevel.BOTH):
                self._l2.clear()
                self._truncate(_L2_FILE)

    def compact(self) -> None:
        """Rewrite the append-only logs from the in-memory state."""
        if self._persist_dir is None:
            return
        with self._lock:
            with open(self._persist_dir / _L1_FILE, "w", encoding="utf-8") as fh:
                for text, (label, note) in self._l1.items():
                    fh.write(dumps_record(
                        {"claim": text, "label": label.value, "note": note}))
                    fh.write("\n")
            with open(self._persist_dir / _L2_FILE, "w", encoding="utf-8") as fh:
                for text, vec in self._l2.items():
                    fh.write(dumps_record({"claim": text, "vec": vec.tolist()}))
                    fh.write("\n")

    @property
    def l1_size(self) -> int:
        return len(self._l1)

    @property
    def l2_size(self) -> int:
        return len(self._l2)

    # --- internals ---

    def _embed(self, text: str) -> np.ndarray:
        vec = np.asarray(self.embedder.embed(text), dtype=np.float64)
        if vec.shape != (self._dim,):
            raise EmbeddingDimensionMismatch(self._dim, int(vec.size))
        return vec

    def _call_verifier(self, text: str) -> tuple[VerdictLabel, str | None]:
        try:
            label, note = self.verifier.verify(text)
        except Exception as exc:
            raise VerifierUnavailable(f"verifier backend failed: {exc}") from exc
        try:
            return VerdictLabel(str(label).lower()), note
        except ValueError as exc:
            raise VerifierUnavailable(f"verifier returned unknown label {label!r}") from exc

    def _l1_lookup_locked(self, text: str) -> ClaimVerdict | None:
        entry = self._l1.get(text)
        if entry is None:
            return None
        self._stats.lookups += 1
        self._stats.l1_hits += 1
        self._stats.check_identity()
        label, note = entry
        return ClaimVerdict(text, label, Provenance.l1(), note)

    def _l2_lookup_locked(self, text: str, vec: np.ndarray) -> ClaimVerdict | None:
        hit = self._l2.nearest(vec)
        if hit is None:
            return None
        key, similarity = hit
        if similarity < self.theta_sem:
            return None
        if self.numeric_guard and numeric_tokens(text) != numeric_tokens(key):
            return None  # differing dosages must not be treated as equivalent
        entry = self._l1.get(key)
        if entry is None:
            return None  # dangling vector (l1 was flushed); fall through
        self._stats.lookups += 1
        self._stats.l2_hits += 1
        self._stats.check_identity()
        label, note = entry
        return ClaimVerdict(text, label, Provenance.l2(similarity), note)

    def _store_locked(self, text: str, vec: np.ndarray,
                      label: VerdictLabel, note: str | None) -> None:
        self._l1[text] = (label, note)
        self._l2.add(text, vec)
        if self._persist_dir is not None:
            self._append(_L1_FILE, {"claim": text, "label": label.value, "note": note})
            self._append(_L2_FILE, {"claim": text, "vec": vec.tolist()})

    def _append(self, name: str, record: dict) -> None:
        assert self._persist_dir is not None
        with open(self._persist_dir / name, "a", encoding="utf-8") as fh:
            fh.write(dumps_record(record))
            fh.write("\n")

    def _truncate(self, name: str) -> None:
        if self._persist_dir is None:
            return
        path = self._persist_dir / name
        if path.exists():
            path.write_text("", encoding="utf-8")

    def _load(self) -> None:
        assert self._persist_dir is not None
        l1_path = self._persist_dir / _L1_FILE
        if l1_path.exists():
            for rec in read_jsonl(l1_path):  # append-only log: last entry wins
                self._l1[rec["claim"]] = (VerdictLabel(rec["label"]), rec.get("note"))
        l2_path = self._persist_dir / _L2_FILE
        if l2_path.exists():
            seen: set[str] = set()
            for rec in read_jsonl(l2_path):
                text = rec["claim"]
                if text in seen:
                    continue
                seen.add(text)
                vec = np.asarray(rec["vec"], dtype=np.float64)
                if vec.shape != (self._dim,):
                    raise EmbeddingDimensionMismatch(self._dim, int(vec.size))
                self._l2.add(text, vec)
