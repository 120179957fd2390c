"""Resolves configured backend names into live objects.

``http:<url>`` builds a thin request/response client; ``double:<name>``
builds one of the deterministic stand-ins shipped with the package.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import requests

from .claims import RuleBasedExtractor
from .config import EngineConfig
from .embedding import HashEmbedder
from .errors import ConfigInvalid, JudgeUnavailable, VerifierUnavailable
from .factcache import TableVerifier
from .pipeline import StubPolicy
from .rubric import ConstantJudge, KeywordJudge

_TIMEOUT = 30.0


class HttpJudge:
    def __init__(self, url: str):
        self.url = url
        self.judge_id = f"http:{url}"

    def judge(self, prefix: str, suffix: str) -> str:
        try:
            resp = requests.post(
                self.url, json={"prefix": prefix, "suffix": suffix}, timeout=_TIMEOUT
            )
            resp.raise_for_status()
            return str(resp.json()["reply"])
        except requests.RequestException as exc:
            raise JudgeUnavailable(f"judge endpoint failed: {exc}") from exc


class HttpVerifier:
    def __init__(self, url: str):
        self.url = url

    def verify(self, claim_text: str) -> tuple[str, str | None]:
        try:
            resp = requests.post(self.url, json={"claim": claim_text}, timeout=_TIMEOUT)
            resp.raise_for_status()
            body = resp.json()
            return str(body["label"]), body.get("note")
        except requests.RequestException as exc:
            raise VerifierUnavailable(f"verifier endpoint failed: {exc}") from exc


class HttpExtractor:
    def __init__(self, url: str):
        self.url = url

    def extract(self, response: str) -> list[str]:
        resp = requests.post(self.url, json={"response": response}, timeout=_TIMEOUT)
        resp.raise_for_status()
        return [str(c) for c in resp.json()["claims"]]


class HttpPolicy:
    def __init__(self, url: str):
        self.url = url

    def generate(self, context: str) -> str:
        resp = requests.post(self.url, json={"context": context}, timeout=_TIMEOUT)
        resp.raise_for_status()
        return str(resp.json()["text"])


class HttpEmbedder:
    def __init__(self, url: str, dim: int = 64):
        self.url = url
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        resp = requests.post(self.url, json={"text": text}, timeout=_TIMEOUT)
        resp.raise_for_status()
        return np.asarray(resp.json()["vector"], dtype=np.float64)


@dataclass
class Backends:
    judge: object
    verifier: object
    embedder: object
    extractor: object
    policy: object


def _split(spec: str) -> tuple[str, str, str]:
    parts = spec.split(":", 2)
    scheme = parts[0]
    name = parts[1] if len(parts) > 1 else ""
    arg = parts[2] if len(parts) > 2 else ""
    return scheme, name, arg


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _is_url(spec: str) -> bool:
    return spec.startswith(("http://", "https://"))


def resolve_judge(spec: str):
    if _is_url(spec):
        return HttpJudge(spec)
    scheme, name, arg = _split(spec)
    if scheme == "double":
        if name == "constant":
            return ConstantJudge(arg or "1")
        if name == "keyword":
            return KeywordJudge(_load_json(arg) if arg else {})
    raise ConfigInvalid(f"unknown judge backend {spec!r}")


def resolve_verifier(spec: str):
    if _is_url(spec):
        return HttpVerifier(spec)
    scheme, name, arg = _split(spec)
    if scheme == "double":
        if name == "table":
            return TableVerifier(truth=_load_json(arg) if arg else {})
        if name == "uncertain":
            return TableVerifier()
    raise ConfigInvalid(f"unknown verifier backend {spec!r}")


def resolve_embedder(spec: str):
    if _is_url(spec):
        return HttpEmbedder(spec)
    scheme, name, arg = _split(spec)
    if scheme == "double" and name == "hash":
        return HashEmbedder(int(arg) if arg else 64)
    raise ConfigInvalid(f"unknown embedder backend {spec!r}")


def resolve_extractor(spec: str):
    if _is_url(spec):
        return HttpExtractor(spec)
    scheme, name, arg = _split(spec)
    if scheme == "double" and name == "rules":
        aliases = _load_json(arg) if arg else {}
        return RuleBasedExtractor(aliases=aliases)
    raise ConfigInvalid(f"unknown extractor backend {spec!r}")


def resolve_policy(spec: str):
    if _is_url(spec):
        return HttpPolicy(spec)
    scheme, name, _arg = _split(spec)
    if scheme == "double" and name == "stub":
        return StubPolicy()
    raise ConfigInvalid(f"unknown policy backend {spec!r}")


def resolve_backends(config: EngineConfig) -> Backends:
    config.validate()
    return Backends(
        judge=resolve_judge(config.backends.judge),
        verifier=resolve_verifier(config.backends.verifier),
        embedder=resolve_embedder(config.backends.embedder),
        extractor=resolve_extractor(config.backends.extractor),
        policy=resolve_policy(config.backends.policy),
    )
