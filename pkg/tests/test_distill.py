from __future__ import annotations

import random

import numpy as np
import pytest

from medrl.distill import (
    TokenLogProbs,
    ToyCategoricalBatch,
    analytic_grad,
    clip_fkl_loss,
    forward_kl_loss,
    grad_check,
    mopd_objective,
)
from medrl.errors import EmptyMask, LengthMismatch


def tlp(student, teacher, mask=None):
    return TokenLogProbs.from_lists(student, teacher, mask)


def test_clip_loss_zero_on_noninferior_student():
    t = tlp([-0.5, -1.0, -2.0], [-0.6, -1.0, -2.5])
    assert clip_fkl_loss(t) == 0.0


def test_clip_loss_single_token():
    assert clip_fkl_loss(tlp([-2.0], [-1.0])) == pytest.approx(2.0)


def test_clip_loss_mean_aggregation():
    # one firing token (-2.0 below -1.0), one silent (-0.5 above -1.0)
    assert clip_fkl_loss(tlp([-2.0, -0.5], [-1.0, -1.0])) == pytest.approx(1.0)


def test_clip_loss_respects_mask():
    t = tlp([-2.0, -9.0], [-1.0, -1.0], mask=[True, False])
    assert clip_fkl_loss(t) == pytest.approx(2.0)


def test_empty_mask_raises():
    with pytest.raises(EmptyMask):
        clip_fkl_loss(tlp([-1.0], [-2.0], mask=[False]))


def test_length_mismatch_raises():
    with pytest.raises(LengthMismatch):
        tlp([-1.0, -2.0], [-1.0])
    with pytest.raises(LengthMismatch):
        tlp([-1.0], [-1.0], mask=[True, False])


def test_positive_logprobs_rejected():
    with pytest.raises(ValueError):
        tlp([0.1], [-1.0])


def test_clip_loss_nonnegative_and_zero_iff_noninferior_fuzz():
    rng = random.Random(23)
    for _ in range(10_000):
        n = rng.randint(1, 8)
        student = [-rng.random() * 4 for _ in range(n)]
        teacher = [-rng.random() * 4 for _ in range(n)]
        t = tlp(student, teacher)
        loss = clip_fkl_loss(t)
        assert loss >= 0.0
        noninferior = all(s >= te for s, te in zip(student, teacher))
        assert (loss == 0.0) == noninferior


def test_clip_loss_one_sided_monotonicity():
    rng = random.Random(29)
    for _ in range(500):
        n = rng.randint(1, 6)
        student = [-rng.random() * 3 for _ in range(n)]
        teacher = [-rng.random() * 3 for _ in range(n)]
        base = clip_fkl_loss(tlp(student, teacher))
        i = rng.randrange(n)
        raised = list(student)
        raised[i] = min(0.0, raised[i] + rng.random())
        assert clip_fkl_loss(tlp(raised, teacher)) <= base


def test_teacher_perturbation_invariance_when_indicator_stays_zero():
    student = [-0.5, -1.5]
    teacher = [-1.0, -2.0]  # indicator 0 at both tokens
    base = clip_fkl_loss(tlp(student, teacher))
    lowered = [-1.2, -2.4]  # still below the student everywhere
    assert clip_fkl_loss(tlp(student, lowered)) == base
    # once the teacher crosses above the student the indicator flips
    crossed = [-0.4, -2.0]
    assert clip_fkl_loss(tlp(student, crossed)) > base


def test_mopd_beta_zero_is_plain_surrogate():
    t = tlp([-1.0, -2.0], [-0.5, -0.1])
    assert mopd_objective(t, advantage=2.0, beta=0.0) == pytest.approx(
        -2.0 * (-1.5)
    )


def test_mopd_identical_distributions_zero_regularizer():
    t = tlp([-1.0, -2.0], [-1.0, -2.0])
    base = mopd_objective(t, advantage=1.0, beta=0.0)
    assert mopd_objective(t, advantage=1.0, beta=5.0) == pytest.approx(base)


def test_mopd_worked_example():
    t = tlp([-1.0], [-2.0])
    assert mopd_objective(t, advantage=1.0, beta=1.0) == pytest.approx(2.0)


def test_mopd_rejects_negative_beta():
    with pytest.raises(ValueError):
        mopd_objective(tlp([-1.0], [-1.0]), advantage=1.0, beta=-0.1)


def test_forward_kl_zero_on_identical():
    assert forward_kl_loss(tlp([-1.0, -2.0], [-1.0, -2.0])) == 0.0


# --- gradient checks on toy categorical policies ---

def toy_batch(rng, k=5, t=12):
    logits = np.array([rng.gauss(0, 1.5) for _ in range(k)])
    tokens = np.array([rng.randrange(k) for _ in range(t)])
    teacher = np.array([-abs(rng.gauss(1.2, 0.8)) for _ in range(t)])
    mask = np.array([rng.random() > 0.2 for _ in range(t)])
    if not mask.any():
        mask[0] = True
    return ToyCategoricalBatch(logits=logits, tokens=tokens,
                               teacher_logprobs=teacher, mask=mask)


def test_grad_check_clip_fkl_small_error():
    rng = random.Random(41)
    worst = max(grad_check("clip_fkl", toy_batch(rng)) for _ in range(20))
    assert worst < 1e-4


def test_grad_check_mopd_small_error():
    rng = random.Random(43)
    worst = max(
        grad_check("mopd", toy_batch(rng), advantage=1.3, beta=0.4)
        for _ in range(20)
    )
    assert worst < 1e-4


def test_mopd_beta_zero_gradient_matches_plain_policy_gradient():
    rng = random.Random(47)
    batch = toy_batch(rng)
    grad = analytic_grad("mopd", batch, advantage=2.0, beta=0.0)
    probs = np.exp(batch.logits - batch.logits.max())
    probs /= probs.sum()
    keep = batch.keep()
    onehots = np.eye(batch.logits.shape[0])[batch.tokens[keep]]
    reference = -2.0 * (onehots - probs[None, :]).sum(axis=0) / keep.sum()
    assert np.max(np.abs(grad - reference)) < 1e-6


def test_grad_check_excludes_indicator_boundary():
    # student logprob exactly equal to teacher: the point sits on the
    # discontinuity and must be excluded rather than checked
    logits = np.array([0.0, 0.0])
    tokens = np.array([0])
    # log softmax of [0,0] gives log(0.5) everywhere
    teacher = np.array([np.log(0.5)])
    batch = ToyCategoricalBatch(logits=logits, tokens=tokens,
                                teacher_logprobs=teacher)
    assert grad_check("clip_fkl", batch) == 0.0


def test_grad_check_unknown_loss():
    rng = random.Random(3)
    with pytest.raises(ValueError):
        grad_check("entropy", toy_batch(rng))
