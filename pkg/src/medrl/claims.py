"""Atomic claim extraction and extraction-fidelity comparison.

A claim is a self-contained declarative statement lifted out of a long-form
response. Extraction enforces three rules: compound content is reduced to
single-fact units with pronouns resolved, units without a factual predicate
are dropped (including recitations of non-selected multiple-choice
options), and exact duplicates are removed while the original order of the
reasoning chain is preserved.

Convention: claim granularity is the sentence/clause unit produced by the
naive segmenter below. Dosages and their indications inside one sentence
stay one claim.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .embedding import EmbeddingBackend, cosine, tokenize
from .errors import EmptyReference, ExtractorMalformedOutput, ExtractorUnavailable
from .records import SCHEMA_VERSION, read_jsonl, write_jsonl

_SENT_BOUNDARY_RE = re.compile(r"(?<=[.!?])\s+")
_TRAILING_PUNCT_RE = re.compile(r"[.!?]+$")
_WS_RE = re.compile(r"\s+")

_ANSWER_RE = re.compile(r"(?im)^\s*(?:final\s+)?answer\s*[:=]\s*([A-E])\b")
_OPTION_RE = re.compile(r"(?m)^\s*([A-E])[.):]\s*(.+)$")

DEFAULT_FACT_LEXICON = frozenset(
    {
        "is", "are", "was", "were", "be", "been",
        "has", "have", "had",
        "causes", "caused", "treats", "treated", "inhibits", "inhibited",
        "blocks", "reduces", "increases", "decreases", "prevents",
        "indicates", "requires", "suggests", "contains", "shows",
        "presents", "affects", "includes", "lowers", "raises",
        "improves", "binds", "lasts", "started", "occurs", "recommended",
    }
)


def split_sentences(text: str) -> list[str]:
    """Naive sentence segmentation on terminal punctuation and newlines.

    A period between digits (decimal doses like '2.5 mg') does not split
    because the boundary requires trailing whitespace.
    """
    sentences = []
    for line in text.splitlines():
        for piece in _SENT_BOUNDARY_RE.split(line):
            piece = piece.strip()
            if piece:
                sentences.append(piece)
    return sentences


def normalize_claim_text(text: str) -> str:
    return _WS_RE.sub(" ", _TRAILING_PUNCT_RE.sub("", text.strip())).strip()


@dataclass(frozen=True)
class AtomicClaim:
    """A self-contained factual statement with its position in the response."""

    text: str
    source_span: tuple[int, int]  # sentence index range, end-exclusive
    order_index: int

    def __post_init__(self):
        if not self.text:
            raise ValueError("claim text must be non-empty")
        if self.order_index < 0:
            raise ValueError("order_index must be non-negative")


class ExtractorBackend(Protocol):
    def extract(self, response: str) -> list[str]: ...


@dataclass
class RuleBasedExtractor:
    """Deterministic extractor shipped as the default backend.

    Sentences are split on terminal punctuation; pronouns are resolved via a
    per-case alias table; a unit counts as factual when it contains a copula
    or a domain verb from the lexicon; interrogatives and recitations of
    non-selected multiple-choice options are dropped.
    """

    aliases: dict[str, str] = field(default_factory=dict)
    lexicon: frozenset[str] = DEFAULT_FACT_LEXICON

    def extract(self, response: str) -> list[str]:
        distractors = self._distractor_texts(response)
        claims = []
        for sentence in split_sentences(response):
            if sentence.endswith("?"):
                continue
            resolved = self._resolve_pronouns(sentence)
            if not self._is_factual(resolved):
                continue
            if self._is_distractor(resolved, distractors):
                continue
            claims.append(normalize_claim_text(resolved))
        return [c for c in claims if c]

    def _resolve_pronouns(self, sentence: str) -> str:
        for pronoun, entity in self.aliases.items():
            sentence = re.sub(
                rf"(?i)\b{re.escape(pronoun)}\b", entity, sentence
            )
        return sentence

    def _is_factual(self, sentence: str) -> bool:
        return any(tok in self.lexicon for tok in tokenize(sentence))

    @staticmethod
    def _distractor_texts(response: str) -> list[str]:
        match = _ANSWER_RE.search(response)
        if match is None:
            return []
        selected = match.group(1).upper()
        texts = []
        for letter, body in _OPTION_RE.findall(response):
            if letter.upper() != selected:
                body = normalize_claim_text(body).lower()
                if len(body) >= 4:
                    texts.append(body)
        return texts

    @staticmethod
    def _is_distractor(sentence: str, distractors: list[str]) -> bool:
        norm = normalize_claim_text(sentence).lower()
        return any(d in norm or norm in d for d in distractors)


def _locate_span(claim_text: str, sentences: list[str]) -> tuple[int, int]:
    """Best-token-overlap sentence index for a claim; first index wins ties."""
    claim_tokens = set(tokenize(claim_text))
    if not sentences:
        return (0, 1)
    best_i, best_score = 0, -1
    for i, sentence in enumerate(sentences):
        score = len(claim_tokens & set(tokenize(sentence)))
        if score > best_score:
            best_i, best_score = i, score
    return (best_i, best_i + 1)


def extract_claims(response: str, extractor: ExtractorBackend) -> list[AtomicClaim]:
    """Run the extractor backend and package ordered, deduplicated claims.

    Exact-string duplicates keep the earliest occurrence; order_index is the
    position in the final list, matching first appearance in the response.
    """
    if not response or not response.strip():
        raise ValueError("response must be non-empty text")
    try:
        raw = extractor.extract(response)
    except Exception as exc:
        raise ExtractorUnavailable(f"extractor backend failed: {exc}") from exc
    if not isinstance(raw, list) or any(not isinstance(c, str) for c in raw):
        raise ExtractorMalformedOutput("extractor must return a list of claim strings")

    sentences = split_sentences(response)
    claims: list[AtomicClaim] = []
    seen: set[str] = set()
    for text in raw:
        text = normalize_claim_text(text)
        if not text:
            raise ExtractorMalformedOutput("extractor returned an empty claim string")
        if text in seen:
            continue
        seen.add(text)
        claims.append(
            AtomicClaim(
                text=text,
                source_span=_locate_span(text, sentences),
                order_index=len(claims),
            )
        )
    return claims


# --- extraction fidelity ---

@dataclass(frozen=True)
class ExtractionReport:
    """Coverage of a candidate extractor against a reference extraction."""

    recall: float
    candidate_exclusive_rate: float
    reference_exclusive_rate: float
    claim_count: float

    def __post_init__(self):
        for name in ("recall", "candidate_exclusive_rate", "reference_exclusive_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


class SemanticMatcher(Protocol):
    threshold: float

    def similarity(self, a: str, b: str) -> float: ...


@dataclass
class EmbeddingMatcher:
    """Symmetric claim equivalence: cosine of embeddings at a threshold."""

    embedder: EmbeddingBackend
    threshold: float = 0.90

    def similarity(self, a: str, b: str) -> float:
        return cosine(self.embedder.embed(a), self.embedder.embed(b))


def compare_extractions(
    reference: list[AtomicClaim],
    candidate: list[AtomicClaim],
    matcher: SemanticMatcher,
) -> ExtractionReport:
    """Match candidate claims to reference claims and report coverage rates.

    Matching is greedy maximal one-to-one by descending similarity, with
    index order breaking ties, so the report is deterministic.
    """
    if not reference:
        raise EmptyReference("recall is undefined for an empty reference")
    pairs = []
    for i, ref in enumerate(reference):
        for j, cand in enumerate(candidate):
            sim = matcher.similarity(ref.text, cand.text)
            if sim >= matcher.threshold:
                pairs.append((-sim, i, j))
    pairs.sort()
    matched_ref: set[int] = set()
    matched_cand: set[int] = set()
    for _neg_sim, i, j in pairs:
        if i in matched_ref or j in matched_cand:
            continue
        matched_ref.add(i)
        matched_cand.add(j)
    matched = len(matched_ref)
    recall = matched / len(reference)
    candidate_exclusive = (
        (len(candidate) - len(matched_cand)) / len(candidate) if candidate else 0.0
    )
    return ExtractionReport(
        recall=recall,
        candidate_exclusive_rate=candidate_exclusive,
        reference_exclusive_rate=1.0 - recall,
        claim_count=float(len(candidate)),
    )


# --- batch mode ---

def extract_batch(
    in_path: str | Path,
    out_path: str | Path,
    extractor: ExtractorBackend,
) -> int:
    """Read {id, response} records, write one record per extracted claim."""
    out = []
    for record in read_jsonl(in_path):
        claims = extract_claims(record["response"], extractor)
        for claim in claims:
            out.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "id": record.get("id"),
                    "order_index": claim.order_index,
                    "text": claim.text,
                    "source_span": list(claim.source_span),
                }
            )
    return write_jsonl(out_path, out)
