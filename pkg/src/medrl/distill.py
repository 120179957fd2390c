"""Distillation objectives over aligned token log-probabilities.

Two pure losses plus a finite-difference gradient check on toy categorical
policies. The one-sided loss penalizes the student only where its token
log-probability falls below the teacher's, which enforces non-inferiority
on the teacher's support without pulling probability mass off everything
else. The regularized objective couples a scalar advantage with a
single-sample reverse-KL estimate toward the teacher.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, LengthMismatch


@dataclass(frozen=True)
class TokenLogProbs:
    """Aligned per-token student/teacher log-probs with an inclusion mask.

    Prompt tokens are typically masked out; only masked-in tokens enter the
    per-sequence mean.
    """

    student: tuple[float, ...]
    teacher: tuple[float, ...]
    mask: tuple[bool, ...] | None = None

    def __post_init__(self):
        if len(self.student) != len(self.teacher):
            raise LengthMismatch(
                f"student/teacher lengths differ: {len(self.student)} vs {len(self.teacher)}"
            )
        if self.mask is not None and len(self.mask) != len(self.student):
            raise LengthMismatch("mask length must match token count")
        if any(v > 0.0 for v in self.student) or any(v > 0.0 for v in self.teacher):
            raise ValueError("log-probabilities must be <= 0")

    @classmethod
    def from_lists(cls, student, teacher, mask=None) -> "TokenLogProbs":
        return cls(
            student=tuple(float(v) for v in student),
            teacher=tuple(float(v) for v in teacher),
            mask=None if mask is None else tuple(bool(m) for m in mask),
        )

    def masked_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(self.student, dtype=np.float64)
        t = np.asarray(self.teacher, dtype=np.float64)
        if self.mask is not None:
            keep = np.asarray(self.mask, dtype=bool)
            s, t = s[keep], t[keep]
        if s.size == 0:
            raise EmptyMask("no masked-in tokens")
        return s, t


def clip_fkl_loss(t: TokenLogProbs) -> float:
    """Mean over masked tokens of 1[s < t] * (-s).

    Zero exactly when the student matches or exceeds the teacher log-prob
    on every masked token.
    """
    s, teacher = t.masked_arrays()
    active = s < teacher
    return float(np.mean(np.where(active, -s, 0.0)))


def forward_kl_loss(t: TokenLogProbs) -> float:
    """Plain single-sample forward-KL estimate, mean of (t - s) over the
    mask. The unclipped baseline the one-sided loss is compared against."""
    s, teacher = t.masked_arrays()
    return float(np.mean(teacher - s))


def mopd_objective(t: TokenLogProbs, advantage: float, beta: float) -> float:
    """Reward-weighted surrogate with reverse-KL regularization toward the
    teacher: -advantage * mean(s) + beta * mean(s - t) over masked tokens.

    With beta = 0 this reduces to the plain policy-gradient surrogate.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    s, teacher = t.masked_arrays()
    return float(-advantage * np.mean(s) + beta * np.mean(s - teacher))


# --- gradient checking on toy categorical policies ---

@dataclass(frozen=True)
class ToyCategoricalBatch:
    """A toy student policy (softmax over logits) evaluated on sampled
    tokens with fixed teacher log-probs."""

    logits: np.ndarray          # (K,) student parameters
    tokens: np.ndarray          # (T,) category index per position
    teacher_logprobs: np.ndarray  # (T,)
    mask: np.ndarray | None = None  # (T,) bool

    def keep(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.tokens.shape[0], dtype=bool)
        return np.asarray(self.mask, dtype=bool)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.sum(np.exp(shifted)))


def _student_logprobs(logits: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    return _log_softmax(logits)[tokens]


def _restricted_loss(
    loss: str, logits: np.ndarray, batch: ToyCategoricalBatch,
    keep: np.ndarray, advantage: float, beta: float,
) -> float:
    s = _student_logprobs(logits, batch.tokens)[keep]
    t = batch.teacher_logprobs[keep]
    if loss == "clip_fkl":
        return float(np.mean(np.where(s < t, -s, 0.0)))
    if loss == "mopd":
        return float(-advantage * np.mean(s) + beta * np.mean(s - t))
    raise ValueError(f"unknown loss {loss!r}")


def analytic_grad(
    loss: str, batch: ToyCategoricalBatch,
    advantage: float = 1.0, beta: float = 0.5,
    keep: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of the loss w.r.t. the student logits, with the indicator
    treated as a constant (straight-through on the gate)."""
    keep = batch.keep() if keep is None else keep
    logits = np.asarray(batch.logits, dtype=np.float64)
    probs = np.exp(_log_softmax(logits))
    tokens = batch.tokens[keep]
    s = _student_logprobs(logits, batch.tokens)[keep]
    t = batch.teacher_logprobs[keep]
    m = tokens.shape[0]
    onehots = np.eye(logits.shape[0])[tokens]  # (m, K)
    dlogp = onehots - probs[None, :]           # d s_i / d logits
    if loss == "clip_fkl":
        indicator = (s < t).astype(np.float64)
        return -(indicator[:, None] * dlogp).sum(axis=0) / m
    if loss == "mopd":
        return float(beta - advantage) * dlogp.sum(axis=0) / m
    raise ValueError(f"unknown loss {loss!r}")


def grad_check(
    loss: str,
    batch: ToyCategoricalBatch,
    fd_epsilon: float = 1e-5,
    advantage: float = 1.0,
    beta: float = 0.5,
) -> float:
    """Max relative error between the analytic gradient and central finite
    differences over the logit coordinates.

    Tokens whose student/teacher gap lies inside the band
    |s - t| < 10 * fd_epsilon are dropped from the comparison: the
    indicator could flip within the perturbation there, so the point sits
    on the discontinuity and is excluded. Returns 0.0 if nothing remains
    to check.
    """
    logits = np.asarray(batch.logits, dtype=np.float64)
    keep = batch.keep().copy()
    if loss == "clip_fkl":
        s = _student_logprobs(logits, batch.tokens)
        gaps = np.abs(s - batch.teacher_logprobs)
        keep &= gaps >= 10.0 * fd_epsilon
    if not keep.any():
        return 0.0

    analytic = analytic_grad(loss, batch, advantage=advantage, beta=beta, keep=keep)
    fd = np.zeros_like(logits)
    for k in range(logits.shape[0]):
        bump = np.zeros_like(logits)
        bump[k] = fd_epsilon
        hi = _restricted_loss(loss, logits + bump, batch, keep, advantage, beta)
        lo = _restricted_loss(loss, logits - bump, batch, keep, advantage, beta)
        fd[k] = (hi - lo) / (2.0 * fd_epsilon)

    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(analytic - fd) / scale))
