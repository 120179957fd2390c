from __future__ import annotations

import random
import statistics

import pytest

from medrl.advantages import (
    DEFAULT_VIOLATION_TAXONOMY,
    GroupStats,
    InteractionStep,
    ToyCurriculumConfig,
    ViolationType,
    build_taxonomy,
    curriculum_demo,
    step_advantages,
    validity_factor,
    violations_from_names,
    weighted_update_terms,
)
from medrl.errors import GroupTooSmall, LengthMismatch

SEVERE = ViolationType("repetition", 0.1)
MILD = ViolationType("rigid-phrasing", 0.9)


def step(idx, *violations):
    return InteractionStep(index=idx, user_turn=f"u{idx}", assistant_turn=f"a{idx}",
                           violations=frozenset(violations))


def oracle_advantage(gamma, r_global, group, eps=1e-6):
    mu = statistics.mean(group)
    sigma = statistics.pstdev(group)
    return (gamma * r_global - mu) / (sigma + eps)


def test_validity_factor_cases():
    assert validity_factor(frozenset()) == 1.0
    assert validity_factor({SEVERE, MILD}) == 0.1
    assert validity_factor({MILD}) == 0.9


def test_violation_coefficient_range():
    with pytest.raises(ValueError):
        ViolationType("bad", 0.0)
    with pytest.raises(ValueError):
        ViolationType("bad", 1.0)


def test_default_taxonomy_coefficients():
    assert DEFAULT_VIOLATION_TAXONOMY["repetition"] == pytest.approx(0.1)
    assert DEFAULT_VIOLATION_TAXONOMY["rigid-phrasing"] == pytest.approx(0.9)
    taxonomy = build_taxonomy()
    assert violations_from_names(["repetition"], taxonomy) == frozenset(
        {taxonomy["repetition"]}
    )
    with pytest.raises(ValueError):
        violations_from_names(["made-up"], taxonomy)


def test_step_advantages_worked_example():
    group = [0.9, 0.5, 0.1]
    clean = step_advantages([step(0)], 0.9, group)
    assert clean[0] == pytest.approx(1.2247, abs=1e-4)
    assert clean[0] == pytest.approx(oracle_advantage(1.0, 0.9, group))

    penalized = step_advantages([step(0, SEVERE)], 0.9, group)
    assert penalized[0] == pytest.approx(-1.2554, abs=1e-4)
    assert penalized[0] == pytest.approx(oracle_advantage(0.1, 0.9, group))


def test_uniform_group_gives_zero_advantage():
    group = [0.6, 0.6, 0.6, 0.6]
    advantages = step_advantages([step(0), step(1)], 0.6, group)
    assert advantages == [0.0, 0.0]


def test_degenerate_group_stays_finite():
    group = [0.6, 0.6]
    advantages = step_advantages([step(0, SEVERE)], 0.6, group)
    assert all(abs(a) < float("inf") for a in advantages)


def test_group_must_contain_r_global():
    with pytest.raises(ValueError):
        step_advantages([step(0)], 0.7, [0.5, 0.6])


def test_group_too_small():
    with pytest.raises(GroupTooSmall):
        step_advantages([step(0)], 0.7, [0.7])


def test_baseline_decoupling_bit_identical():
    rng = random.Random(12)
    for _ in range(100):
        size = rng.randint(2, 8)
        group = [round(rng.random(), 6) for _ in range(size)]
        trajs = [[step(j) for j in range(rng.randint(1, 5))] for _ in range(size)]
        baseline = [
            step_advantages(trajs[i], group[i], group) for i in range(size)
        ]
        victim = rng.randrange(size)
        poisoned = [
            [step(s.index, SEVERE) for s in trajs[i]] if i == victim else trajs[i]
            for i in range(size)
        ]
        after = [
            step_advantages(poisoned[i], group[i], group) for i in range(size)
        ]
        for i in range(size):
            if i == victim:
                continue
            assert after[i] == baseline[i]  # bit-identical, not approx


def test_gamma_one_reduces_to_plain_normalization():
    group = [0.2, 0.5, 0.8, 0.4]
    trajectory = [step(j) for j in range(3)]
    advantages = step_advantages(trajectory, 0.8, group)
    assert advantages[0] == advantages[1] == advantages[2]
    assert advantages[0] == pytest.approx(oracle_advantage(1.0, 0.8, group), rel=1e-12)


def test_ordering_smaller_gamma_smaller_advantage():
    rng = random.Random(44)
    for _ in range(200):
        group = [rng.uniform(0.05, 1.0) for _ in range(4)]
        r = group[0]
        a_severe = step_advantages([step(0, SEVERE)], r, group)[0]
        a_mild = step_advantages([step(0, MILD)], r, group)[0]
        a_clean = step_advantages([step(0)], r, group)[0]
        assert a_severe < a_mild < a_clean


def test_update_terms_identity_ratio():
    trajectory = [step(0), step(1)]
    advantages = [0.4, -1.2]
    terms = weighted_update_terms(trajectory, advantages, [-1.0, -2.0], [-1.0, -2.0])
    assert terms == pytest.approx(advantages)


def test_update_terms_clip_positive_advantage():
    import math

    trajectory = [step(0)]
    lp_old = [-1.0]
    lp_new = [lp_old[0] + math.log(1.5)]  # ratio 1.5
    terms = weighted_update_terms(trajectory, [2.0], lp_new, lp_old, clip_range=0.2)
    assert terms[0] == pytest.approx(1.2 * 2.0)


def test_update_terms_negative_advantage_below_band():
    import math

    trajectory = [step(0)]
    lp_new = [math.log(0.5) - 1.0]
    lp_old = [-1.0]  # ratio 0.5, below the lower clip of 0.8
    terms = weighted_update_terms(trajectory, [-1.0], lp_new, lp_old, clip_range=0.2)
    # min(0.5 * -1, 0.8 * -1): the clipped branch is the pessimistic one,
    # freezing the term once the ratio has dropped out of the band
    assert terms[0] == pytest.approx(-0.8)


def test_update_terms_negative_advantage_above_band_unclipped():
    import math

    trajectory = [step(0)]
    lp_new = [math.log(1.5) - 1.0]
    lp_old = [-1.0]  # ratio 1.5, above the upper clip of 1.2
    terms = weighted_update_terms(trajectory, [-1.0], lp_new, lp_old, clip_range=0.2)
    # min(1.5 * -1, 1.2 * -1) selects the unclipped branch: gradient keeps
    # pushing an over-weighted bad step down
    assert terms[0] == pytest.approx(-1.5)


def test_update_terms_length_mismatch():
    with pytest.raises(LengthMismatch):
        weighted_update_terms([step(0)], [1.0, 2.0], [-1.0], [-1.0])


def test_group_stats_population_std():
    stats = GroupStats.from_rewards([0.9, 0.5, 0.1])
    assert stats.mu_raw == pytest.approx(0.5)
    assert stats.sigma_raw == pytest.approx(statistics.pstdev([0.9, 0.5, 0.1]))
    assert stats.group_size == 3


def test_iteration_zero_severe_signal_dominates():
    # high variance group centered on the rollout's own reward
    group = [0.6, 0.5, 0.4]
    r = 0.5
    a_severe = step_advantages([step(0, SEVERE)], r, group)[0]
    a_mild = step_advantages([step(0, MILD)], r, group)[0]
    assert abs(a_severe) > 5 * abs(a_mild)


def test_curriculum_severe_extinguishes_before_mild():
    trace = curriculum_demo(seed=0)
    cross_severe = trace.first_below(trace.severe_rate, 0.05)
    cross_mild = trace.first_below(trace.mild_rate, 0.05)
    assert cross_severe is not None and cross_mild is not None
    assert cross_severe < cross_mild
    # both violation classes are eventually suppressed
    assert trace.severe_rate[-1] <= 0.05
    assert trace.mild_rate[-1] <= 0.10
    # reward variance tightens as the policy stabilizes
    early = statistics.mean(trace.sigma_raw[:10])
    late = statistics.mean(trace.sigma_raw[-10:])
    assert late < early


def test_curriculum_no_violations_reduces_to_plain_normalization():
    cfg = ToyCurriculumConfig(iterations=5, severe_penalty=0.999, mild_penalty=0.999)
    trace = curriculum_demo(cfg, seed=1)
    assert len(trace.mean_reward) == 5
