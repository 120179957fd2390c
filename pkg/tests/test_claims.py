from __future__ import annotations

import random

import pytest

from medrl.claims import (
    AtomicClaim,
    EmbeddingMatcher,
    RuleBasedExtractor,
    compare_extractions,
    extract_batch,
    extract_claims,
    normalize_claim_text,
    split_sentences,
)
from medrl.embedding import HashEmbedder
from medrl.errors import (
    EmptyReference,
    ExtractorMalformedOutput,
    ExtractorUnavailable,
)
from medrl.records import read_jsonl, write_jsonl


def claims_of(texts):
    return [
        AtomicClaim(text=t, source_span=(i, i + 1), order_index=i)
        for i, t in enumerate(texts)
    ]


def test_split_sentences_basic():
    text = "Aspirin inhibits COX-1. It also inhibits COX-2."
    assert split_sentences(text) == [
        "Aspirin inhibits COX-1.",
        "It also inhibits COX-2.",
    ]


def test_split_keeps_decimal_doses_together():
    assert split_sentences("The dose is 2.5 mg daily. It is taken at night.") == [
        "The dose is 2.5 mg daily.",
        "It is taken at night.",
    ]


def test_extract_resolves_pronouns():
    extractor = RuleBasedExtractor(aliases={"it": "Aspirin"})
    claims = extract_claims(
        "Aspirin inhibits COX-1. It also inhibits COX-2.", extractor
    )
    assert [c.text for c in claims] == [
        "Aspirin inhibits COX-1",
        "Aspirin also inhibits COX-2",
    ]
    assert [c.order_index for c in claims] == [0, 1]
    assert claims[0].source_span == (0, 1)
    assert claims[1].source_span == (1, 2)


def test_greeting_has_no_claims():
    claims = extract_claims("Hello! Thanks for waiting today.", RuleBasedExtractor())
    assert claims == []


def test_questions_are_not_claims():
    claims = extract_claims(
        "How long have you had the fever? The fever lasts 3 days.",
        RuleBasedExtractor(),
    )
    assert [c.text for c in claims] == ["The fever lasts 3 days"]


def test_verbatim_repeats_dedupe_to_earliest():
    text = "Aspirin inhibits COX-1. Aspirin inhibits COX-1. Aspirin inhibits COX-1."
    claims = extract_claims(text, RuleBasedExtractor())
    assert len(claims) == 1
    assert claims[0].order_index == 0


def test_distractor_options_filtered():
    response = (
        "A. Amoxicillin treats the infection\n"
        "B. Ibuprofen reduces the inflammation\n"
        "Answer: B\n"
        "Ibuprofen reduces the inflammation. The swelling is already smaller."
    )
    claims = extract_claims(response, RuleBasedExtractor())
    texts = [c.text for c in claims]
    assert "Ibuprofen reduces the inflammation" in texts
    assert all("Amoxicillin" not in t for t in texts)


def test_order_indices_strictly_increasing():
    extractor = RuleBasedExtractor()
    rng = random.Random(2)
    facts = [f"Drug{i} treats condition{i}." for i in range(12)]
    for _ in range(20):
        rng.shuffle(facts)
        claims = extract_claims(" ".join(facts), extractor)
        assert [c.order_index for c in claims] == list(range(len(claims)))


def test_extraction_idempotent_under_rejoin():
    extractor = RuleBasedExtractor(aliases={"it": "Aspirin"})
    response = (
        "Aspirin inhibits COX-1. It also inhibits COX-2. "
        "Aspirin inhibits COX-1. The tablet is taken daily."
    )
    first = extract_claims(response, extractor)
    rejoined = ". ".join(c.text for c in first) + "."
    second = extract_claims(rejoined, extractor)
    assert [c.text for c in first] == [c.text for c in second]


def test_extract_rejects_empty_response():
    with pytest.raises(ValueError):
        extract_claims("   ", RuleBasedExtractor())


def test_extractor_unavailable_wrapped():
    class Down:
        def extract(self, response):
            raise ConnectionError("no route")

    with pytest.raises(ExtractorUnavailable):
        extract_claims("some text.", Down())


def test_extractor_malformed_output():
    class Junk:
        def extract(self, response):
            return [42]

    with pytest.raises(ExtractorMalformedOutput):
        extract_claims("some text.", Junk())

    class Empties:
        def extract(self, response):
            return ["  "]

    with pytest.raises(ExtractorMalformedOutput):
        extract_claims("some text.", Empties())


def test_normalize_claim_text():
    assert normalize_claim_text("  The  dose is 5 mg.  ") == "The dose is 5 mg"


# --- extraction comparison ---

def matcher():
    return EmbeddingMatcher(embedder=HashEmbedder(), threshold=0.90)


def test_compare_worked_example():
    # 4 reference claims, 5 candidate claims, exactly 3 equivalent pairs
    reference = claims_of([
        "aspirin inhibits cox one enzyme",
        "the fever lasts three days",
        "ibuprofen reduces joint swelling",
        "the rash covers both forearms",
    ])
    candidate = claims_of([
        "aspirin inhibits cox one enzyme",          # exact
        "lasts three days the fever",               # reorder, same bag
        "reduces joint swelling ibuprofen",         # reorder, same bag
        "metformin lowers glucose levels",          # unrelated
        "amoxicillin clears the ear infection",     # unrelated
    ])
    report = compare_extractions(reference, candidate, matcher())
    assert report.recall == pytest.approx(0.75)
    assert report.candidate_exclusive_rate == pytest.approx(0.40)
    assert report.reference_exclusive_rate == pytest.approx(0.25)
    assert report.claim_count == 5.0


def test_compare_identical_sets():
    ref = claims_of(["a is b", "c is d"])
    cand = claims_of(["a is b", "c is d"])
    report = compare_extractions(ref, cand, matcher())
    assert report.recall == 1.0
    assert report.candidate_exclusive_rate == 0.0
    assert report.reference_exclusive_rate == 0.0


def test_compare_disjoint_sets():
    ref = claims_of(["aspirin inhibits cox", "fever lasts days"])
    cand = claims_of(["metformin lowers glucose", "xray shows fracture"])
    report = compare_extractions(ref, cand, matcher())
    assert report.recall == 0.0
    assert report.candidate_exclusive_rate == 1.0
    assert report.reference_exclusive_rate == 1.0


def test_recall_plus_reference_exclusive_is_one():
    rng = random.Random(11)
    vocab = ["fever", "cough", "rash", "dose", "pain", "sleep", "diet", "pulse"]
    for _ in range(50):
        ref = claims_of([
            f"{rng.choice(vocab)} {rng.choice(vocab)} is {rng.choice(vocab)}"
            for _ in range(rng.randint(1, 6))
        ])
        cand = claims_of([
            f"{rng.choice(vocab)} {rng.choice(vocab)} is {rng.choice(vocab)}"
            for _ in range(rng.randint(0, 6))
        ])
        report = compare_extractions(ref, cand, matcher())
        assert report.recall + report.reference_exclusive_rate == pytest.approx(1.0)


def test_compare_matching_is_one_to_one():
    # two candidates equivalent to the same single reference: only one match
    ref = claims_of(["aspirin inhibits cox enzyme"])
    cand = claims_of([
        "aspirin inhibits cox enzyme",
        "inhibits aspirin cox enzyme",
    ])
    report = compare_extractions(ref, cand, matcher())
    assert report.recall == 1.0
    assert report.candidate_exclusive_rate == pytest.approx(0.5)


def test_compare_empty_reference():
    with pytest.raises(EmptyReference):
        compare_extractions([], claims_of(["a is b"]), matcher())


def test_batch_extraction_roundtrip(tmp_path):
    in_path = tmp_path / "responses.jsonl"
    out_path = tmp_path / "claims.jsonl"
    write_jsonl(in_path, [
        {"id": "r1", "response": "Aspirin inhibits COX-1. It also inhibits COX-2."},
        {"id": "r2", "response": "Hello there!"},
    ])
    n = extract_batch(in_path, out_path, RuleBasedExtractor(aliases={"it": "Aspirin"}))
    rows = read_jsonl(out_path)
    assert n == len(rows) == 2
    assert rows[0]["id"] == "r1" and rows[0]["order_index"] == 0
    assert rows[1]["source_span"] == [1, 2]
