"""PAD error rates (ISO/IEC 30107-3 style).

The attack class is positive: at threshold t a sample is classified as an
attack iff its score > t. APCER counts attacks classified bona fide, BPCER
bona fides classified attack; both use their own class count as denominator.
All rates are percentages.
"""

from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence

import numpy as np

from data.models import EvalReport, PadLabel, ScoredSample
from utils.errors import MetricInputError, MissingClassError

FIXED_APCER_TARGETS = (0.1, 1.0)


def _split_scores(samples: Sequence[ScoredSample]) -> tuple[np.ndarray, np.ndarray]:
    attacks = np.sort([s.score for s in samples if s.truth == PadLabel.ATTACK])
    bona = np.sort([s.score for s in samples if s.truth == PadLabel.BONA_FIDE])
    if attacks.size == 0 or bona.size == 0:
        missing = PadLabel.ATTACK if attacks.size == 0 else PadLabel.BONA_FIDE
        raise MissingClassError(f"no {missing.value} samples to evaluate")
    return attacks.astype(np.float64), bona.astype(np.float64)


def round_rate(value: float, places: int = 2) -> float:
    """Half-up rounding as used in published tables (11.125 -> 11.13)."""
    quantum = Decimal(1).scaleb(-places)
    cleaned = Decimal(str(round(value, 9)))
    return float(cleaned.quantize(quantum, rounding=ROUND_HALF_UP))


def rates_at_decisions(samples: Sequence[ScoredSample]) -> tuple[float, float, float, float]:
    """(ccr, apcer, bpcer, hter) from per-sample decisions."""
    if any(s.decision is None for s in samples):
        raise MetricInputError("every sample needs a decision")
    attacks = [s for s in samples if s.truth == PadLabel.ATTACK]
    bona = [s for s in samples if s.truth == PadLabel.BONA_FIDE]
    if not attacks or not bona:
        missing = PadLabel.ATTACK if not attacks else PadLabel.BONA_FIDE
        raise MissingClassError(f"no {missing.value} samples to evaluate")
    missed_attacks = sum(s.decision != PadLabel.ATTACK for s in attacks)
    rejected_bona = sum(s.decision != PadLabel.BONA_FIDE for s in bona)
    correct = len(samples) - missed_attacks - rejected_bona
    ccr = 100.0 * correct / len(samples)
    apcer = 100.0 * missed_attacks / len(attacks)
    bpcer = 100.0 * rejected_bona / len(bona)
    return ccr, apcer, bpcer, (apcer + bpcer) / 2.0


def operating_points(samples: Sequence[ScoredSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, apcer, bpcer) over -inf, every distinct score, +inf."""
    attacks, bona = _split_scores(samples)
    thresholds = np.concatenate(([-np.inf], np.unique(np.concatenate((attacks, bona))), [np.inf]))
    apcer = 100.0 * np.searchsorted(attacks, thresholds, side="right") / attacks.size
    bpcer = 100.0 * (bona.size - np.searchsorted(bona, thresholds, side="right")) / bona.size
    return thresholds, apcer, bpcer


def det_points(samples: Sequence[ScoredSample]) -> list[tuple[float, float, float]]:
    thresholds, apcer, bpcer = operating_points(samples)
    return [(float(a), float(b), float(t)) for t, a, b in zip(thresholds, apcer, bpcer)]


def eer(samples: Sequence[ScoredSample]) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Walks the operating points to the first one where apcer - bpcer >= 0 and
    interpolates linearly from its predecessor. When one end of that segment
    is an infinite sentinel the finite end is reported as the threshold.
    """
    thresholds, apcer, bpcer = operating_points(samples)
    diff = apcer - bpcer
    k = int(np.argmax(diff >= 0.0))
    if diff[k] == 0.0:
        return float(apcer[k]), float(thresholds[k])
    lo, hi = k - 1, k
    alpha = -diff[lo] / (diff[hi] - diff[lo])
    rate = apcer[lo] + alpha * (apcer[hi] - apcer[lo])
    t_lo, t_hi = thresholds[lo], thresholds[hi]
    if not np.isfinite(t_lo):
        threshold = t_hi
    elif not np.isfinite(t_hi):
        threshold = t_lo
    else:
        threshold = t_lo + alpha * (t_hi - t_lo)
    return float(rate), float(threshold)


def bpcer_at_apcer(samples: Sequence[ScoredSample], target_apcer: float) -> float:
    """BPCER at the largest threshold whose APCER does not exceed the target.

    The -inf sentinel (every sample called an attack, APCER 0) always
    qualifies, so a target that any real threshold overshoots yields BPCER 100.
    """
    thresholds, apcer, bpcer = operating_points(samples)
    allowed = np.nonzero(apcer <= target_apcer + 1e-12)[0]
    return float(bpcer[allowed[-1]])


def evaluate(samples: Sequence[ScoredSample]) -> EvalReport:
    ccr, apcer, bpcer, hter = rates_at_decisions(samples)
    eer_value, eer_threshold = eer(samples)
    fixed = {format(t, "g"): bpcer_at_apcer(samples, t) for t in FIXED_APCER_TARGETS}
    return EvalReport(
        ccr=ccr,
        apcer=apcer,
        bpcer=bpcer,
        hter=hter,
        eer=eer_value,
        eer_threshold=eer_threshold,
        bpcer_at_apcer=fixed,
        bona_fide_count=sum(s.truth == PadLabel.BONA_FIDE for s in samples),
        attack_count=sum(s.truth == PadLabel.ATTACK for s in samples),
    )


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Element-wise mean of per-repeat reports; thresholds are not averaged."""
    if not reports:
        raise MetricInputError("no reports to average")

    def mean(field: str) -> float:
        return float(np.mean([getattr(r, field) for r in reports]))

    apcer, bpcer = mean("apcer"), mean("bpcer")
    keys = reports[0].bpcer_at_apcer.keys()
    return EvalReport(
        ccr=mean("ccr"),
        apcer=apcer,
        bpcer=bpcer,
        hter=(apcer + bpcer) / 2.0,
        eer=mean("eer"),
        eer_threshold=None,
        bpcer_at_apcer={k: float(np.mean([r.bpcer_at_apcer[k] for r in reports])) for k in keys},
        bona_fide_count=int(round(mean("bona_fide_count"))),
        attack_count=int(round(mean("attack_count"))),
    )


def samples_from_decisions(decisions: dict, truths: dict, image_ids: Optional[Sequence[str]] = None) -> list[ScoredSample]:
    """Join per-image PadDecisions with ground truth."""
    ids = list(image_ids) if image_ids is not None else sorted(decisions)
    return [
        ScoredSample(
            image_id=i,
            truth=truths[i],
            score=decisions[i].fused_score,
            decision=decisions[i].label,
        )
        for i in ids
    ]
