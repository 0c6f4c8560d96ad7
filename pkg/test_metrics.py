import os
import sys

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

import numpy as np
import pytest

from data.models import PadLabel, ScoredSample
from evaluation.metrics import (
    average_reports,
    bpcer_at_apcer,
    det_points,
    eer,
    evaluate,
    rates_at_decisions,
    round_rate,
)
from utils.errors import MetricInputError, MissingClassError

ATTACK, BONA = PadLabel.ATTACK, PadLabel.BONA_FIDE


def _confusion(attacks, missed, bona, rejected):
    samples = [ScoredSample(image_id=f"a{i}", truth=ATTACK, score=1.0, decision=BONA if i < missed else ATTACK) for i in range(attacks)]
    samples += [ScoredSample(image_id=f"b{i}", truth=BONA, score=0.0, decision=ATTACK if i < rejected else BONA) for i in range(bona)]
    return samples


def _scored(attack_scores, bona_scores):
    samples = [ScoredSample(image_id=f"a{i}", truth=ATTACK, score=float(s)) for i, s in enumerate(attack_scores)]
    samples += [ScoredSample(image_id=f"b{i}", truth=BONA, score=float(s)) for i, s in enumerate(bona_scores)]
    return samples


@pytest.mark.parametrize(
    "attacks, missed, bona, rejected, hter",
    [
        (10000, 231, 10000, 1994, 11.13),
        (10000, 18, 10000, 0, 0.09),
        (50, 0, 50, 0, 0.0),
    ],
)
def test_published_rate_pairs(attacks, missed, bona, rejected, hter):
    ccr, apcer, bpcer, got = rates_at_decisions(_confusion(attacks, missed, bona, rejected))
    assert round_rate(got) == hter
    assert ccr == pytest.approx(100.0 * (attacks + bona - missed - rejected) / (attacks + bona))


def test_perfect_decisions():
    assert rates_at_decisions(_confusion(10, 0, 10, 0)) == (100.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("value, expected", [(11.125, 11.13), (0.09, 0.09), (2.345, 2.35), (19.944, 19.94)])
def test_round_rate_is_half_up(value, expected):
    assert round_rate(value) == expected


def test_missing_class_and_missing_decision():
    with pytest.raises(MissingClassError):
        rates_at_decisions(_confusion(5, 0, 0, 0))
    with pytest.raises(MissingClassError):
        eer(_scored([0.9, 0.8], []))
    with pytest.raises(MetricInputError):
        rates_at_decisions(_scored([0.9], [0.1]))


def _brute_force(attack_scores, bona_scores):
    """APCER/BPCER at every candidate threshold, straight from the definitions."""
    thresholds = [-np.inf] + sorted(set(attack_scores) | set(bona_scores)) + [np.inf]
    points = []
    for t in thresholds:
        apcer = 100.0 * sum(s <= t for s in attack_scores) / len(attack_scores)
        bpcer = 100.0 * sum(s > t for s in bona_scores) / len(bona_scores)
        points.append((apcer, bpcer))
    return points


def _brute_eer(points):
    for k, (a, b) in enumerate(points):
        if a - b >= 0:
            if a == b:
                return a
            a0, b0 = points[k - 1]
            alpha = -(a0 - b0) / ((a - b) - (a0 - b0))
            return a0 + alpha * (a - a0)


def test_eer_and_bpcer_at_apcer_match_brute_force():
    rng = np.random.default_rng(12)
    for _ in range(200):
        attack_scores = np.round(rng.uniform(0.2, 1.0, rng.integers(1, 30)), 2).tolist()
        bona_scores = np.round(rng.uniform(0.0, 0.8, rng.integers(1, 30)), 2).tolist()
        samples = _scored(attack_scores, bona_scores)
        points = _brute_force(attack_scores, bona_scores)

        assert eer(samples)[0] == pytest.approx(_brute_eer(points), abs=1e-9)
        for target in (0.1, 1.0, 10.0, 50.0):
            expected = [b for a, b in points if a <= target][-1]
            assert bpcer_at_apcer(samples, target) == pytest.approx(expected)


def test_eer_of_identical_distributions():
    scores = np.linspace(0.0, 1.0, 101)
    value, threshold = eer(_scored(scores, scores))
    assert value == pytest.approx(50.0, abs=1.0)
    assert 0.0 <= threshold <= 1.0


def test_eer_of_separable_scores():
    value, threshold = eer(_scored([0.8, 0.9, 0.95], [0.1, 0.2, 0.3]))
    assert value == 0.0
    assert 0.3 <= threshold < 0.8


def test_attacks_below_bona_fide():
    samples = _scored([0.1] * 10, [0.9] * 10)
    assert bpcer_at_apcer(samples, 0.1) == 100.0
    assert eer(samples)[0] == 100.0


def test_eer_is_rank_invariant():
    rng = np.random.default_rng(21)
    attack_scores = rng.uniform(0.3, 1.0, 40)
    bona_scores = rng.uniform(0.0, 0.7, 40)
    a = eer(_scored(attack_scores, bona_scores))[0]
    b = eer(_scored(attack_scores**2, bona_scores**2))[0]
    assert a == pytest.approx(b)


def test_bpcer_at_apcer_is_non_increasing_in_target():
    rng = np.random.default_rng(4)
    samples = _scored(rng.uniform(0.2, 1.0, 60), rng.uniform(0.0, 0.8, 60))
    values = [bpcer_at_apcer(samples, t) for t in (0.1, 1.0, 5.0, 10.0, 25.0, 50.0, 100.0)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_det_points_span_both_extremes():
    points = det_points(_scored([0.6, 0.9], [0.1, 0.7]))
    assert points[0][:2] == (0.0, 100.0)
    assert points[-1][:2] == (100.0, 0.0)


def test_evaluate_and_average():
    samples = [s.model_copy(update={"decision": ATTACK if s.score > 0.5 else BONA}) for s in _scored([0.9, 0.8, 0.3], [0.1, 0.2, 0.6])]
    report = evaluate(samples)

    assert report.apcer == pytest.approx(100.0 / 3)
    assert report.bpcer == pytest.approx(100.0 / 3)
    assert set(report.bpcer_at_apcer) == {"0.1", "1"}
    assert (report.attack_count, report.bona_fide_count) == (3, 3)

    perfect = evaluate(_confusion(3, 0, 3, 0))
    mean = average_reports([report, perfect])
    assert mean.apcer == pytest.approx(report.apcer / 2)
    assert mean.hter == pytest.approx((mean.apcer + mean.bpcer) / 2)
    assert mean.eer_threshold is None
