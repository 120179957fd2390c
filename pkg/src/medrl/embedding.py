"""Deterministic text embeddings and cosine similarity.

The shipped embedder is a token-hash bag projected to a fixed dimension and
L2-normalized. It needs no model weights, so identical inputs embed
identically on every machine, which is what the caches and matchers in this
package rely on for reproducible tests.
"""
from __future__ import annotations

import hashlib
import re
from typing import Protocol

import numpy as np

DEFAULT_DIM = 64

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_NUMERIC_RE = re.compile(r"\d+(?:\.\d+)?")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def numeric_tokens(text: str) -> set[str]:
    """All numeric literals in the text (used by the dosage guard)."""
    return set(_NUMERIC_RE.findall(text))


class EmbeddingBackend(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Signed token-hash bag-of-words embedder, unit-normalized."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 2:
            raise ValueError("embedding dimension must be at least 2")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            index = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[index] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero vectors compare as 0 to everything."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
