"""Saliency-weighted factuality penalty with a competence-gated aggregate.

The raw verdict stream is denoised in two steps before it can shape a
reward: semantically equivalent claims collapse into clusters (so padding a
response with paraphrases cannot dilute the penalty), and each cluster is
weighted by the representative claim's maximum similarity to any response
sentence (so penalties concentrate on central statements rather than
marginal asides). The penalty is then scaled by a sigmoid gate on the task
reward: weak responses are protected from factuality pressure, strong ones
get the full constraint.

A count-based baseline (``naive_reward``) is included for comparison; it is
the objective the denoised formulation exists to replace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .claims import AtomicClaim
from .embedding import EmbeddingBackend, cosine
from .errors import InvalidThresholds, ZeroClaims
from .factcache import VerdictLabel

DEFAULT_CLUSTER_THRESHOLD = 0.90
DEFAULT_TAU_MIN = 0.75
DEFAULT_TAU_MAX = 0.95
DEFAULT_KAPPA = 10.0
DEFAULT_FACT_EPS = 1e-8

PENALIZED_LABELS = frozenset({VerdictLabel.REFUTED, VerdictLabel.UNCERTAIN})


@dataclass(frozen=True)
class ClaimCluster:
    """A group of semantically equivalent claims with one representative."""

    members: tuple[AtomicClaim, ...]
    representative: AtomicClaim
    representative_label: VerdictLabel
    saliency: float

    def __post_init__(self):
        if not self.members:
            raise ValueError("cluster must have at least one member")
        if self.representative not in self.members:
            raise ValueError("representative must be a cluster member")
        if not 0.0 <= self.saliency <= 1.0:
            raise ValueError("saliency must be in [0, 1]")


@dataclass(frozen=True)
class FactRewardBreakdown:
    r_task: float
    r_fact: float
    lambda_: float
    r_total: float
    cluster_count: int
    penalized_mass: float

    def as_record(self) -> dict:
        return {
            "r_task": self.r_task,
            "r_fact": self.r_fact,
            "lambda": self.lambda_,
            "r_total": self.r_total,
            "cluster_count": self.cluster_count,
            "penalized_mass": self.penalized_mass,
        }


def cluster_claims(
    claims: list[AtomicClaim],
    labels: list[VerdictLabel],
    sentences: list[str],
    embedder: EmbeddingBackend,
    threshold: float = DEFAULT_CLUSTER_THRESHOLD,
) -> list[ClaimCluster]:
    """Partition claims into single-link clusters in order_index order.

    Claims are visited by ascending order_index; each joins the first
    existing cluster containing any member at cosine >= threshold, else
    starts a new cluster. The representative is therefore always the
    member with the lowest order_index. Saliency is the representative's
    maximum cosine against the response sentences, clamped at 0.
    """
    if len(claims) != len(labels):
        raise ValueError("claims and labels must align one-to-one")
    if not claims:
        return []
    ordered = sorted(range(len(claims)), key=lambda i: claims[i].order_index)
    vectors = {i: embedder.embed(claims[i].text) for i in ordered}
    sentence_vecs = [embedder.embed(s) for s in sentences]

    cluster_members: list[list[int]] = []
    for i in ordered:
        placed = False
        for members in cluster_members:
            if any(cosine(vectors[i], vectors[j]) >= threshold for j in members):
                members.append(i)
                placed = True
                break
        if not placed:
            cluster_members.append([i])

    clusters = []
    for members in cluster_members:
        rep = members[0]
        rep_vec = vectors[rep]
        saliency = 0.0
        for svec in sentence_vecs:
            saliency = max(saliency, cosine(rep_vec, svec))
        clusters.append(
            ClaimCluster(
                members=tuple(claims[j] for j in members),
                representative=claims[rep],
                representative_label=labels[rep],
                saliency=min(1.0, saliency),
            )
        )
    return clusters


def fact_penalty(clusters: list[ClaimCluster], eps: float = DEFAULT_FACT_EPS) -> float:
    """Weighted penalty in [-1, 0]: the saliency mass of refuted or
    uncertain representatives over the total saliency mass.

    An empty cluster list returns 0: a response that asserts nothing is not
    penalized, since punishing silence would just teach conservatism.
    """
    if not clusters:
        return 0.0
    penalized = sum(c.saliency for c in clusters
                    if c.representative_label in PENALIZED_LABELS)
    total = sum(c.saliency for c in clusters)
    return -penalized / (total + eps)


def gate_lambda(
    r_task: float,
    tau_min: float = DEFAULT_TAU_MIN,
    tau_max: float = DEFAULT_TAU_MAX,
    kappa: float = DEFAULT_KAPPA,
) -> float:
    """Sigmoid gate on the task reward, centered between the two thresholds.

    Below tau_min the gate is effectively 0 (penalties suppressed while the
    response is still weak); above tau_max it saturates toward 1.
    """
    if tau_max <= tau_min:
        raise InvalidThresholds(f"tau_max must exceed tau_min, got {tau_min}, {tau_max}")
    if not 0.0 <= r_task <= 1.0:
        raise ValueError(f"r_task must be in [0, 1], got {r_task}")
    mu = (tau_min + tau_max) / 2.0
    delta = tau_max - tau_min
    x = kappa * (r_task - mu) / delta
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def fact_aware_reward(
    r_task: float,
    clusters: list[ClaimCluster],
    tau_min: float = DEFAULT_TAU_MIN,
    tau_max: float = DEFAULT_TAU_MAX,
    kappa: float = DEFAULT_KAPPA,
    eps: float = DEFAULT_FACT_EPS,
) -> FactRewardBreakdown:
    """Compose the gated factuality penalty with the task reward."""
    lam = gate_lambda(r_task, tau_min=tau_min, tau_max=tau_max, kappa=kappa)
    r_fact = fact_penalty(clusters, eps=eps)
    penalized_mass = sum(c.saliency for c in clusters
                         if c.representative_label in PENALIZED_LABELS)
    return FactRewardBreakdown(
        r_task=r_task,
        r_fact=r_fact,
        lambda_=lam,
        r_total=r_task + lam * r_fact,
        cluster_count=len(clusters),
        penalized_mass=penalized_mass,
    )


def naive_reward(r_task: float, n_hallu: int, n_total: int, alpha: float) -> float:
    """Count-based baseline: task reward minus a scaled hallucination rate.

    Vulnerable by construction: padding the response with correct filler
    claims inflates n_total and shrinks the penalty without fixing errors.
    """
    if n_total == 0:
        raise ZeroClaims("hallucination rate undefined with zero claims")
    if n_total < 0 or n_hallu < 0 or n_hallu > n_total:
        raise ValueError("need 0 <= n_hallu <= n_total")
    return r_task + alpha * (-n_hallu / n_total)
