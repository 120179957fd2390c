"""Engine configuration: thresholds, taxonomy, instructions, backend wiring.

Backends are named by URI-ish strings: ``http:<url>`` for a remote
request/response backend, ``double:<name>[:<arg>]`` for one of the shipped
deterministic stand-ins. Test doubles resolve only when
``allow_test_doubles`` is set, so a production config cannot silently fall
back to canned answers.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .advantages import DEFAULT_VIOLATION_TAXONOMY
from .errors import ConfigInvalid
from .pipeline import DEFAULT_STAGE_INSTRUCTIONS, StageType

ENV_CONFIG = "MEDRL_CONFIG"
ENV_SEED = "MEDRL_SEED"


@dataclass
class Thresholds:
    stage_gate_tau: float = 0.7          # pipeline quality gate
    semantic_cache: float = 0.95         # L2 reuse threshold
    claim_cluster: float = 0.90          # claim clustering threshold
    claim_match: float = 0.90            # extraction-comparison equivalence
    gate_tau_min: float = 0.75           # factuality gate lower knee
    gate_tau_max: float = 0.95           # factuality gate upper knee
    gate_kappa: float = 10.0             # factuality gate steepness
    fact_eps: float = 1e-8               # penalty denominator epsilon
    advantage_eps: float = 1e-6          # advantage denominator epsilon

    def validate(self) -> None:
        in_unit = {
            "stage_gate_tau": self.stage_gate_tau,
            "semantic_cache": self.semantic_cache,
            "claim_cluster": self.claim_cluster,
            "claim_match": self.claim_match,
            "gate_tau_min": self.gate_tau_min,
            "gate_tau_max": self.gate_tau_max,
        }
        for name, value in in_unit.items():
            if not 0.0 < value <= 1.0:
                raise ConfigInvalid(f"{name} must be in (0, 1], got {value}")
        if self.gate_tau_max <= self.gate_tau_min:
            raise ConfigInvalid("gate_tau_max must exceed gate_tau_min")
        if self.gate_kappa <= 0:
            raise ConfigInvalid("gate_kappa must be positive")
        if self.fact_eps <= 0 or self.advantage_eps <= 0:
            raise ConfigInvalid("epsilons must be positive")


@dataclass
class BackendsConfig:
    judge: str = "double:constant:1"
    verifier: str = "double:table"
    embedder: str = "double:hash"
    extractor: str = "double:rules"
    policy: str = "double:stub"


@dataclass
class EngineConfig:
    thresholds: Thresholds = field(default_factory=Thresholds)
    violation_taxonomy: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_VIOLATION_TAXONOMY)
    )
    stage_instructions: dict[str, str] = field(
        default_factory=lambda: {
            s.label: text for s, text in DEFAULT_STAGE_INSTRUCTIONS.items()
        }
    )
    backends: BackendsConfig = field(default_factory=BackendsConfig)
    stage_rubrics: dict[str, str] = field(default_factory=dict)  # stage -> rubric file
    judge_parallelism: int = 8
    cache_dir: str | None = None
    seed: int = 0
    allow_test_doubles: bool = True

    def validate(self) -> None:
        self.thresholds.validate()
        for name, coeff in self.violation_taxonomy.items():
            if not 0.0 < coeff < 1.0:
                raise ConfigInvalid(
                    f"violation {name!r}: coefficient must be in (0, 1), got {coeff}"
                )
        if self.judge_parallelism < 1:
            raise ConfigInvalid("judge_parallelism must be >= 1")
        known = {s.label for s in StageType}
        unknown = set(self.stage_instructions) - known
        if unknown:
            raise ConfigInvalid(f"unknown stages in instructions: {sorted(unknown)}")
        if not self.allow_test_doubles:
            for name, value in vars(self.backends).items():
                if value.startswith("double:"):
                    raise ConfigInvalid(
                        f"backend {name!r} is a test double but test doubles "
                        f"are not enabled"
                    )

    def instructions_by_stage(self) -> dict[StageType, str]:
        return {
            StageType[s.upper()]: text
            for s, text in self.stage_instructions.items()
        }

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        data = dict(data)
        thresholds = Thresholds(**data.pop("thresholds", {}))
        backends = BackendsConfig(**data.pop("backends", {}))
        try:
            config = cls(thresholds=thresholds, backends=backends, **data)
        except TypeError as exc:
            raise ConfigInvalid(f"bad config field: {exc}") from exc
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except FileNotFoundError as exc:
            raise ConfigInvalid(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"config file is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigInvalid("config root must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def from_env(cls) -> "EngineConfig":
        """Config from MEDRL_CONFIG if set, else defaults; MEDRL_SEED wins."""
        path = os.environ.get(ENV_CONFIG)
        config = cls.load(path) if path else cls()
        seed = os.environ.get(ENV_SEED)
        if seed is not None:
            try:
                config.seed = int(seed)
            except ValueError as exc:
                raise ConfigInvalid(f"{ENV_SEED} must be an integer") from exc
        return config

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.as_dict(), fh, sort_keys=False)


def dump_default_config() -> str:
    return yaml.safe_dump(EngineConfig().as_dict(), sort_keys=False)
