"""Overlapping micro-stripes cut radially from a normalized texture."""

import numpy as np

from data.models import MicroStripe, NormalizedTexture, StripeSet
from utils.errors import StripeConfigError


def stripe_count(texture_height: int, height: int, stride: int) -> int:
    return (texture_height - height) // stride + 1


def extract_stripes(tex: NormalizedTexture, height: int = 32, stride: int = 4, source_id: str = "") -> StripeSet:
    """Stripes at row offsets 0, stride, 2*stride, ... that fit inside the texture."""
    if height < 1 or height > tex.height:
        raise StripeConfigError(f"stripe height {height} does not fit a texture of {tex.height} rows")
    if stride < 1:
        raise StripeConfigError(f"stride must be at least 1, got {stride}")
    count = stripe_count(tex.height, height, stride)
    stripes = tuple(
        MicroStripe(row_offset=k * stride, values=tex.values[k * stride : k * stride + height])
        for k in range(count)
    )
    return StripeSet(
        stripes=stripes,
        source_id=source_id,
        stride=stride,
        texture_height=tex.height,
        texture_width=tex.width,
    )


def sample_odd_stripes(stripe_set: StripeSet, k: int, seed: int) -> StripeSet:
    """k distinct stripes drawn without replacement, kept in row-offset order."""
    if k % 2 == 0:
        raise StripeConfigError(f"stripe sample size must be odd, got {k}")
    if k < 1 or k > len(stripe_set):
        raise StripeConfigError(f"cannot sample {k} stripes from {len(stripe_set)}")
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(stripe_set), size=k, replace=False))
    return stripe_set.model_copy(
        update={"stripes": tuple(stripe_set.stripes[i] for i in picked), "sampled": True}
    )


def reassemble(stripe_set: StripeSet) -> tuple[np.ndarray, np.ndarray]:
    """Paste stripes back at their offsets; returns (grid, covered-row mask)."""
    grid = np.zeros((stripe_set.texture_height, stripe_set.texture_width))
    covered = np.zeros(stripe_set.texture_height, dtype=bool)
    for stripe in stripe_set.stripes:
        grid[stripe.row_offset : stripe.row_offset + stripe.height] = stripe.values
        covered[stripe.row_offset : stripe.row_offset + stripe.height] = True
    return grid, covered
