"""Step-level validity penalties and group-relative advantage estimation.

Each interaction step (one user/assistant exchange) carries a set of
triggered violations. A step's validity factor is 1 when the set is empty,
else the smallest penalty coefficient among its violations: only the most
severe error counts. The step advantage compares the step-penalized return
against the mean and standard deviation of the *unpenalized* rewards of the
rollout group, so penalizing one rollout's steps never shifts the baseline
the others are judged against.

The asymmetry in penalty scale produces an implicit curriculum: severe
violations (small coefficients) dominate the gradient while reward variance
is high; mild ones only start to matter once the group tightens. The toy
demo at the bottom makes that schedule observable.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .errors import GroupTooSmall, LengthMismatch

DEFAULT_ADVANTAGE_EPS = 1e-6

# name -> penalty coefficient; extensible via configuration
DEFAULT_VIOLATION_TAXONOMY: dict[str, float] = {
    "repetition": 0.1,
    "safety-risk": 0.15,
    "rigid-phrasing": 0.9,
}


@dataclass(frozen=True)
class ViolationType:
    name: str
    lambda_v: float

    def __post_init__(self):
        if not 0.0 < self.lambda_v < 1.0:
            raise ValueError(
                f"violation {self.name!r}: penalty coefficient must be in (0, 1)"
            )


def build_taxonomy(table: dict[str, float] | None = None) -> dict[str, ViolationType]:
    table = table if table is not None else DEFAULT_VIOLATION_TAXONOMY
    return {name: ViolationType(name, coeff) for name, coeff in table.items()}


def violations_from_names(
    names: list[str], taxonomy: dict[str, ViolationType]
) -> frozenset[ViolationType]:
    missing = [n for n in names if n not in taxonomy]
    if missing:
        raise ValueError(f"unknown violation types: {missing}")
    return frozenset(taxonomy[n] for n in names)


@dataclass(frozen=True)
class InteractionStep:
    """One complete dialogue exchange with its violation annotations."""

    index: int
    user_turn: str
    assistant_turn: str
    violations: frozenset[ViolationType] = frozenset()


@dataclass(frozen=True)
class GroupStats:
    """Mean and population std of the raw (unpenalized) group rewards."""

    mu_raw: float
    sigma_raw: float
    group_size: int

    @classmethod
    def from_rewards(cls, rewards: list[float]) -> "GroupStats":
        n = len(rewards)
        if n < 2:
            raise GroupTooSmall(f"need at least 2 rollouts per group, got {n}")
        mu = sum(rewards) / n
        var = sum((r - mu) ** 2 for r in rewards) / n
        return cls(mu_raw=mu, sigma_raw=math.sqrt(var), group_size=n)


def validity_factor(violations: frozenset[ViolationType] | set[ViolationType]) -> float:
    """1 for a clean step, else the smallest coefficient among violations."""
    if not violations:
        return 1.0
    return min(v.lambda_v for v in violations)


def step_advantages(
    trajectory: list[InteractionStep],
    r_global: float,
    group: list[float],
    eps: float = DEFAULT_ADVANTAGE_EPS,
) -> list[float]:
    """Per-step advantages: (gamma_j * r_global - mu_raw) / (sigma_raw + eps).

    ``group`` holds the raw global rewards of all rollouts sampled for the
    same prompt, including ``r_global`` itself. The baseline statistics are
    computed from those raw values only; step penalties never leak into
    them.
    """
    if not any(g == r_global for g in group):
        raise ValueError("r_global must be one of the group's raw rewards")
    stats = GroupStats.from_rewards(group)
    denom = stats.sigma_raw + eps
    return [
        (validity_factor(step.violations) * r_global - stats.mu_raw) / denom
        for step in trajectory
    ]


def weighted_update_terms(
    trajectory: list[InteractionStep],
    advantages: list[float],
    policy_logprobs_new: list[float],
    policy_logprobs_old: list[float],
    clip_range: float = 0.2,
) -> list[float]:
    """Per-step clipped surrogate objective terms (to be maximized).

    Standard pessimistic form: min(ratio * A, clip(ratio) * A) with a
    linear clip interval [1 - clip_range, 1 + clip_range]. Pure arithmetic,
    no optimizer state.
    """
    n = len(trajectory)
    if not (len(advantages) == len(policy_logprobs_new) == len(policy_logprobs_old) == n):
        raise LengthMismatch(
            f"trajectory, advantages and log-prob lists must align, got "
            f"{n}/{len(advantages)}/{len(policy_logprobs_new)}/{len(policy_logprobs_old)}"
        )
    if not 0.0 < clip_range < 1.0:
        raise ValueError("clip_range must be in (0, 1)")
    terms = []
    for adv, lp_new, lp_old in zip(advantages, policy_logprobs_new, policy_logprobs_old):
        ratio = math.exp(lp_new - lp_old)
        clipped = min(max(ratio, 1.0 - clip_range), 1.0 + clip_range)
        terms.append(min(ratio * adv, clipped * adv))
    return terms


# --- toy curriculum demonstration ---

@dataclass(frozen=True)
class ToyCurriculumConfig:
    """Softmax policy over three step behaviors: a severely penalized one,
    a mildly penalized one, and a clean one."""

    iterations: int = 80
    group_size: int = 8
    steps_per_rollout: int = 6
    learning_rate: float = 0.5
    severe_penalty: float = 0.1
    mild_penalty: float = 0.9
    reward_noise: float = 0.05
    eps: float = DEFAULT_ADVANTAGE_EPS


@dataclass
class CurriculumTrace:
    severe_rate: list[float] = field(default_factory=list)
    mild_rate: list[float] = field(default_factory=list)
    clean_rate: list[float] = field(default_factory=list)
    sigma_raw: list[float] = field(default_factory=list)
    mean_reward: list[float] = field(default_factory=list)

    def first_below(self, series: list[float], level: float) -> int | None:
        for i, value in enumerate(series):
            if value < level:
                return i
        return None


def _softmax(logits: list[float]) -> list[float]:
    peak = max(logits)
    exps = [math.exp(x - peak) for x in logits]
    total = sum(exps)
    return [e / total for e in exps]


def curriculum_demo(
    config: ToyCurriculumConfig | None = None, seed: int = 0
) -> CurriculumTrace:
    """Train a toy softmax policy with step advantages and record how fast
    each violation class disappears.

    Behavior 0 carries the severe violation, behavior 1 the mild one,
    behavior 2 is clean. The global reward grows with the fraction of clean
    steps plus a little noise, so reward variance shrinks as the policy
    stabilizes and the trace shows severe violations dying out before mild
    ones.
    """
    cfg = config or ToyCurriculumConfig()
    rng = random.Random(seed)
    gammas = [cfg.severe_penalty, cfg.mild_penalty, 1.0]
    logits = [0.0, 0.0, 0.0]
    trace = CurriculumTrace()

    for _ in range(cfg.iterations):
        probs = _softmax(logits)
        rollouts = []
        for _g in range(cfg.group_size):
            behaviors = rng.choices(
                (0, 1, 2), weights=probs, k=cfg.steps_per_rollout
            )
            clean_frac = behaviors.count(2) / cfg.steps_per_rollout
            reward = 0.25 + 0.7 * clean_frac + rng.gauss(0.0, cfg.reward_noise)
            reward = min(1.0, max(0.05, reward))
            rollouts.append((behaviors, reward))

        rewards = [r for _b, r in rollouts]
        stats = GroupStats.from_rewards(rewards)
        denom = stats.sigma_raw + cfg.eps

        grad = [0.0, 0.0, 0.0]
        counts = [0, 0, 0]
        for behaviors, reward in rollouts:
            for b in behaviors:
                counts[b] += 1
                adv = (gammas[b] * reward - stats.mu_raw) / denom
                for k in range(3):
                    indicator = 1.0 if k == b else 0.0
                    grad[k] += adv * (indicator - probs[k])
        total_steps = cfg.group_size * cfg.steps_per_rollout
        for k in range(3):
            logits[k] += cfg.learning_rate * grad[k] / total_steps

        trace.severe_rate.append(counts[0] / total_steps)
        trace.mild_rate.append(counts[1] / total_steps)
        trace.clean_rate.append(counts[2] / total_steps)
        trace.sigma_raw.append(stats.sigma_raw)
        trace.mean_reward.append(stats.mu_raw)
    return trace
