"""Image-level PAD decisions from per-stripe scores.

A stripe (or fused score) counts as an attack only when it is strictly
above the threshold; ties go to bona fide.
"""

from typing import Sequence

import numpy as np

from data.models import ClassifierModel, FusionStrategy, MicroStripe, NormalizedTexture, PadDecision, PadLabel, StripeScore
from stages.classifier import score_stripe
from stages.normalization import resample_rows
from utils.errors import FusionInputError

DEFAULT_THRESHOLD = 0.5


def _label(is_attack: bool) -> PadLabel:
    return PadLabel.ATTACK if is_attack else PadLabel.BONA_FIDE


def majority_vote(scores: Sequence[StripeScore], threshold: float = DEFAULT_THRESHOLD) -> PadDecision:
    if not scores:
        raise FusionInputError("majority vote needs at least one stripe score")
    if len(scores) % 2 == 0:
        raise FusionInputError(f"majority vote needs an odd number of stripes, got {len(scores)}")
    votes = np.array([s.p_attack for s in scores]) > threshold
    attack = int(votes.sum())
    total = len(scores)
    return PadDecision(
        label=_label(2 * attack > total),
        fused_score=attack / total,
        strategy=FusionStrategy.MAJORITY_VOTE,
        votes_attack=attack,
        votes_total=total,
    )


def mean_score(scores: Sequence[StripeScore], threshold: float = DEFAULT_THRESHOLD) -> PadDecision:
    if not scores:
        raise FusionInputError("mean score needs at least one stripe score")
    probs = np.array([s.p_attack for s in scores])
    mean = float(np.clip(probs.mean(), 0.0, 1.0))
    return PadDecision(
        label=_label(mean > threshold),
        fused_score=mean,
        strategy=FusionStrategy.MEAN_SCORE,
        votes_attack=int((probs > threshold).sum()),
        votes_total=len(probs),
    )


def resize_baseline(
    tex: NormalizedTexture,
    model: ClassifierModel,
    stripe_height: int,
    threshold: float = DEFAULT_THRESHOLD,
) -> PadDecision:
    """Squeeze the whole texture to one stripe of ``stripe_height`` rows and score it once."""
    if stripe_height < 1:
        raise FusionInputError(f"stripe height must be positive, got {stripe_height}")
    stripe = MicroStripe(row_offset=0, values=resample_rows(tex.values, stripe_height))
    score = score_stripe(model, stripe)
    is_attack = score.p_attack > threshold
    return PadDecision(
        label=_label(is_attack),
        fused_score=score.p_attack,
        strategy=FusionStrategy.RESIZE_BASELINE,
        votes_attack=int(is_attack),
        votes_total=1,
    )


def fuse(strategy: FusionStrategy, scores: Sequence[StripeScore], threshold: float = DEFAULT_THRESHOLD) -> PadDecision:
    """Score-list strategies only; the resize baseline needs the texture."""
    strategy = FusionStrategy(strategy)
    if strategy == FusionStrategy.MAJORITY_VOTE:
        return majority_vote(scores, threshold)
    if strategy == FusionStrategy.MEAN_SCORE:
        return mean_score(scores, threshold)
    raise FusionInputError("resize_baseline fuses a texture, not a list of stripe scores")
