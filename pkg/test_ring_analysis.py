import os
import sys

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

import numpy as np
import pytest

from data.cache import Cache
from data.models import CircleParams, ExtendedBoundaries, RingProfile, SynthParams, TrainConfig
from evaluation.ring_analysis import mean_profile, per_ring_eer, ring_boundaries
from harness.pipeline import Preprocessor, manifest_dir_of
from harness.synth import synth_generate
from utils.config import Settings
from utils.errors import RingConfigError


def _annulus(inner=60.0, outer=100.0):
    return ExtendedBoundaries(
        inner=CircleParams(cx=80, cy=80, r=inner),
        outer=CircleParams(cx=80, cy=80, r=outer),
        s1=0.4,
        s2=0.4,
    )


def test_ten_rings_of_equal_width():
    rings = ring_boundaries(_annulus(), 10)
    assert len(rings) == 10
    assert [r.index for r in rings] == list(range(10))
    assert all(r.width == pytest.approx(4.0) for r in rings)
    assert (rings[0].inner.r, rings[0].outer.r) == pytest.approx((60.0, 64.0))
    assert (rings[9].inner.r, rings[9].outer.r) == pytest.approx((96.0, 100.0))
    # contiguous and concentric
    assert all(a.outer.r == b.inner.r for a, b in zip(rings, rings[1:]))
    assert all((r.inner.cx, r.inner.cy) == (80, 80) for r in rings)


def test_two_rings_split_at_the_middle():
    inner, outer = ring_boundaries(_annulus(), 2)
    assert inner.outer.r == pytest.approx(80.0)
    assert outer.outer.r == 100.0


@pytest.mark.parametrize("n", [1, 0, -3])
def test_ring_count_below_two(n):
    with pytest.raises(RingConfigError):
        ring_boundaries(_annulus(), n)


def test_profile_normalization():
    profile = RingProfile.from_eers([20.0, 10.0, 30.0])
    assert profile.normalized == pytest.approx([0.5, 0.0, 1.0])
    assert profile.min_ring == 1

    flat = RingProfile.from_eers([5.0, 5.0])
    assert flat.normalized == [0.0, 0.0]

    mean = mean_profile([profile, RingProfile.from_eers([0.0, 10.0, 30.0])])
    assert mean.eers == pytest.approx([10.0, 10.0, 30.0])


@pytest.fixture(scope="module")
def ring_preprocessor(tmp_path_factory):
    params = SynthParams(
        image_size=160,
        pupil_radius_min=18,
        pupil_radius_max=24,
        iris_radius_min=50,
        iris_radius_max=60,
        bona_fide_count=40,
        attack_count=40,
        seed=7,
    )
    dataset = synth_generate(params, str(tmp_path_factory.mktemp("rings") / "eyes"))
    return dataset.records, Preprocessor(Settings(workers=2), manifest_dir_of(dataset.manifest_path), Cache())


def test_border_rings_carry_the_artifact(ring_preprocessor):
    records, preprocessor = ring_preprocessor

    profile = per_ring_eer(records, 10, 16, TrainConfig(seed=3), preprocessor)

    assert len(profile.eers) == 10
    assert min(profile.normalized) == 0.0 and max(profile.normalized) == 1.0
    # the lens edge sits at 56%-81% of the annulus, rings 5 to 8
    assert profile.min_ring in {5, 6, 7, 8}
    assert profile.eers[0] > min(profile.eers)
    assert np.all(np.array(profile.eers) >= 0.0)


def test_ring_profile_holds_across_training_seeds(ring_preprocessor):
    records, preprocessor = ring_preprocessor

    held = 0
    for seed in range(5):
        profile = per_ring_eer(records, 10, 16, TrainConfig(seed=100 + seed), preprocessor)
        held += profile.min_ring in {5, 6, 7, 8} and profile.eers[0] > min(profile.eers)
    assert held >= 4
