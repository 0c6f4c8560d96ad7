import json
import os
import sys

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

import pytest

from data.cache import Cache, get_cache
from data.models import ExperimentConfig, LensType, ManifestRecord, PadLabel, Protocol, Split, SynthParams
from harness.experiment import BASELINE_VARIANT, ExperimentRunner, run_experiment
from harness.manifest import by_split, complete_splits, load_manifest, soft_excluded, soft_in_test_only, split_counts
from harness.synth import synth_generate
from utils.errors import (
    ConfigError,
    DuplicateRecordError,
    ManifestConsistencyError,
    ManifestParseError,
    ProtocolMismatchError,
)
from utils.protocols import PROTOCOL_ORDER, get_record_filter

HEADER = "image_id,path,split,truth,lens_type,segmentation_ref\n"

SMALL_EYES = dict(
    image_size=128,
    pupil_radius_min=14,
    pupil_radius_max=18,
    iris_radius_min=40,
    iris_radius_max=48,
    center_jitter=2,
)


def _write(tmp_path, body, name="manifest.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body)
    return str(path)


def _record(image_id, truth, lens, split=None):
    return ManifestRecord(image_id=image_id, path=f"{image_id}.png", split=split, truth=truth, lens_type=lens)


def test_load_manifest(tmp_path):
    path = _write(
        tmp_path,
        "eye1,img/eye1.png,train,bona_fide,none,seg.txt#0\n"
        "eye2,img/eye2.png,,attack,textured,\n"
        "eye3,img/eye3.png,test,bona_fide,soft,\n",
    )
    records = load_manifest(path)

    assert [r.image_id for r in records] == ["eye1", "eye2", "eye3"]
    assert records[0].split == Split.TRAIN
    assert records[0].segmentation_ref == "seg.txt#0"
    assert records[1].split is None and records[1].segmentation_ref is None
    assert records[2].lens_type == LensType.SOFT


@pytest.mark.parametrize(
    "body, error, line",
    [
        ("eye1,a.png,train,bona_fide,none,\neye2,b.png,validation,attack,textured,\n", ManifestParseError, 3),
        ("eye1,a.png,train,maybe,none,\n", ManifestParseError, 2),
        ("eye1,a.png,train,bona_fide,textured,\n", ManifestConsistencyError, 2),
        ("eye1,a.png,train,attack,none,\n", ManifestConsistencyError, 2),
        ("eye1,a.png,train,bona_fide,none,\neye1,b.png,test,attack,printout,\n", DuplicateRecordError, 3),
    ],
)
def test_manifest_errors_carry_line_numbers(tmp_path, body, error, line):
    with pytest.raises(error) as info:
        load_manifest(_write(tmp_path, body))
    assert info.value.line == line


def test_manifest_header_and_empty_file(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,path\neye1,a.png\n")
    with pytest.raises(ManifestParseError) as info:
        load_manifest(str(bad))
    assert info.value.line == 1
    with pytest.raises(ManifestParseError):
        load_manifest(_write(tmp_path, "", name="empty.csv"))


@pytest.mark.parametrize("n, expected", [(10, (6, 2, 2)), (200, (120, 40, 40)), (3, (2, 1, 0)), (1, (1, 0, 0))])
def test_split_counts(n, expected):
    assert split_counts(n) == expected


def test_complete_splits_fills_missing_only():
    records = [_record(f"bf{i}", PadLabel.BONA_FIDE, LensType.NONE) for i in range(10)]
    records += [_record(f"atk{i}", PadLabel.ATTACK, LensType.TEXTURED) for i in range(10)]
    records.append(_record("fixed", PadLabel.ATTACK, LensType.PRINTOUT, Split.TEST))

    done = complete_splits(records, seed=5)
    groups = by_split(done)

    assert len(groups[Split.TRAIN]) == 12
    assert len(groups[Split.DEV]) == 4
    assert len(groups[Split.TEST]) == 5
    assert next(r for r in done if r.image_id == "fixed").split == Split.TEST
    assert complete_splits(records, seed=5) == done
    assert [r.image_id for r in done] == [r.image_id for r in records]


def test_complete_splits_carves_dev_from_train():
    records = [_record(f"bf{i}", PadLabel.BONA_FIDE, LensType.NONE, Split.TRAIN) for i in range(8)]
    records += [_record(f"atk{i}", PadLabel.ATTACK, LensType.TEXTURED, Split.TRAIN) for i in range(8)]
    records += [_record("t1", PadLabel.BONA_FIDE, LensType.NONE, Split.TEST), _record("t2", PadLabel.ATTACK, LensType.TEXTURED, Split.TEST)]

    groups = by_split(complete_splits(records, seed=1))

    assert len(groups[Split.DEV]) == 4
    assert {r.truth for r in groups[Split.DEV]} == {PadLabel.BONA_FIDE, PadLabel.ATTACK}
    assert len(groups[Split.TRAIN]) == 12


def _soft_records():
    return [
        _record("bf", PadLabel.BONA_FIDE, LensType.NONE, Split.TRAIN),
        _record("soft_train", PadLabel.BONA_FIDE, LensType.SOFT, Split.TRAIN),
        _record("soft_test", PadLabel.BONA_FIDE, LensType.SOFT, Split.TEST),
        _record("atk", PadLabel.ATTACK, LensType.TEXTURED, Split.TEST),
    ]


def test_soft_lens_filters():
    records = _soft_records()
    assert [r.image_id for r in soft_in_test_only(records)] == ["bf", "soft_test", "atk"]
    assert [r.image_id for r in soft_excluded(records)] == ["bf", "atk"]
    assert get_record_filter(Protocol.SOFT_LENS_1)(records) == records
    # labels are never rewritten
    assert all(r.truth == PadLabel.BONA_FIDE for r in soft_in_test_only(records) if r.lens_type == LensType.SOFT)


@pytest.mark.parametrize("protocol", [Protocol.SOFT_LENS_1, Protocol.SOFT_LENS_2, Protocol.SOFT_LENS_3])
def test_soft_protocols_need_soft_records(protocol):
    records = [r for r in _soft_records() if r.lens_type != LensType.SOFT]
    with pytest.raises(ProtocolMismatchError):
        get_record_filter(protocol)(records)


def test_protocol_order_lists_every_protocol():
    assert [value for _, value in PROTOCOL_ORDER] == [p.value for p in Protocol]


def test_synth_dataset_layout(tmp_path):
    params = SynthParams(
        image_size=64,
        pupil_radius_min=6,
        pupil_radius_max=8,
        iris_radius_min=18,
        iris_radius_max=22,
        center_jitter=2,
        bona_fide_count=200,
        attack_count=200,
    )
    dataset = synth_generate(params, str(tmp_path / "eyes"))
    records = load_manifest(dataset.manifest_path)
    groups = by_split(records)

    assert len(records) == 400
    assert (len(groups[Split.TRAIN]), len(groups[Split.DEV]), len(groups[Split.TEST])) == (240, 80, 80)
    for split in Split:
        assert sum(r.truth == PadLabel.ATTACK for r in groups[split]) * 2 == len(groups[split])
    assert all(os.path.isfile(tmp_path / "eyes" / r.path) for r in records)
    assert all(r.segmentation_ref.startswith("segmentation.txt#") for r in records)


def test_synth_is_reproducible(tmp_path):
    params = SynthParams(bona_fide_count=3, attack_count=3, soft_lens_count=2, **SMALL_EYES)
    a = synth_generate(params, str(tmp_path / "a"))
    b = synth_generate(params, str(tmp_path / "b"))

    assert a.records == b.records
    for name in ("manifest.csv", "segmentation.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for r in a.records:
        assert (tmp_path / "a" / r.path).read_bytes() == (tmp_path / "b" / r.path).read_bytes()
    assert sum(r.lens_type == LensType.SOFT for r in a.records) == 2


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    params = SynthParams(bona_fide_count=30, attack_count=30, soft_lens_count=0, seed=3, **SMALL_EYES)
    return synth_generate(params, str(root / "eyes"))


def test_standard_experiment(small_dataset, tmp_path):
    cfg = ExperimentConfig(protocol=Protocol.STANDARD, repeat_count=2, seed=4)
    out = tmp_path / "run"
    result = run_experiment(cfg, small_dataset.manifest_path, str(out), cache=Cache())

    assert result.main_variant == "majority_vote"
    assert len(result.repeats) == 2
    assert result.report.hter <= 20.0
    assert result.report.attack_count == 6 and result.report.bona_fide_count == 6
    mean_hter = sum(r.variants["majority_vote"].hter for r in result.repeats) / 2
    assert result.report.hter == pytest.approx(mean_hter)

    for name in ("report.json", "report.txt"):
        assert (out / name).is_file()
    assert (out / "report.txt").read_text().startswith("protocol Standard")
    for name in ("report.json", "model.json", "scores.csv", "decisions.csv"):
        assert (out / "repeat_0" / name).is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["provenance"]["repeat_seeds"] == cfg.repeat_seeds
    assert len(report["provenance"]["manifest"]["sha256"]) == 64


def test_experiment_is_deterministic(small_dataset, tmp_path):
    cfg = ExperimentConfig(protocol=Protocol.STANDARD, repeat_count=1, seed=9, sample_k=5)
    first = run_experiment(cfg, small_dataset.manifest_path, str(tmp_path / "a"), cache=Cache())
    second = run_experiment(cfg, small_dataset.manifest_path, str(tmp_path / "b"), cache=Cache())
    assert first.report == second.report
    assert first.repeats == second.repeats
    for name in ("report.json", "report.txt", "repeat_0/model.json", "repeat_0/scores.csv", "repeat_0/decisions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_global_cache_is_cleared_after_a_run(small_dataset):
    shared = Cache()
    run_experiment(ExperimentConfig(repeat_count=1), small_dataset.manifest_path, cache=shared)
    assert len(shared) > 0

    run_experiment(ExperimentConfig(repeat_count=1), small_dataset.manifest_path)
    assert len(get_cache()) == 0


def test_fusion_compare_variants(small_dataset):
    cfg = ExperimentConfig(protocol=Protocol.FUSION_COMPARE, repeat_count=1, include_baseline=True)
    result = run_experiment(cfg, small_dataset.manifest_path, cache=Cache())
    assert set(result.variants) == {"majority_vote", "mean_score", "resize_baseline", BASELINE_VARIANT}
    assert result.main_variant == "majority_vote"


def test_stripe_ablation_variants(small_dataset):
    cfg = ExperimentConfig(protocol=Protocol.STRIPE_ABLATION, repeat_count=1, ablation_heights=[24, 48])
    runner = ExperimentRunner(cfg, small_dataset.manifest_path, cache=Cache())
    assert runner.main_variant == "h24"
    assert runner.heights == [24, 48]
    result = runner.run()
    assert list(result.variants) == ["h24", "h48"]


def test_soft_protocol_without_soft_records(small_dataset):
    cfg = ExperimentConfig(protocol=Protocol.SOFT_LENS_2, repeat_count=1)
    runner = ExperimentRunner(cfg, small_dataset.manifest_path, cache=Cache())
    with pytest.raises(ProtocolMismatchError):
        runner.prepare()
    assert runner.features == {}


@pytest.mark.parametrize(
    "cfg",
    [
        ExperimentConfig(stripe_height=28),  # 10 stripes
        ExperimentConfig(protocol=Protocol.FUSION_COMPARE, stripe_height=28),
        ExperimentConfig(protocol=Protocol.STRIPE_ABLATION, ablation_heights=[32, 36]),  # 9 and 8 stripes
        ExperimentConfig(stripe_height=64, sample_k=3),  # 1 stripe
    ],
)
def test_prepare_rejects_stripe_geometry_before_training(small_dataset, cfg):
    runner = ExperimentRunner(cfg, small_dataset.manifest_path, cache=Cache())
    with pytest.raises(ConfigError):
        runner.prepare()
    assert runner.features == {}


def test_even_stripe_count_is_fine_without_majority_vote(small_dataset):
    cfg = ExperimentConfig(stripe_height=28, fusion="mean_score")
    ExperimentRunner(cfg, small_dataset.manifest_path, cache=Cache()).check_geometry()


# Full-size synthetic datasets: 200 bona fide + 200 attack eyes at 320 px.


@pytest.fixture(scope="module")
def border_ring_dataset(tmp_path_factory):
    params = SynthParams(bona_fide_count=200, attack_count=200, seed=1)
    return synth_generate(params, str(tmp_path_factory.mktemp("full") / "eyes")), Cache()


def test_standard_protocol_detects_border_rings(border_ring_dataset):
    dataset, cache = border_ring_dataset
    cfg = ExperimentConfig(protocol=Protocol.STANDARD, repeat_count=5)

    result = run_experiment(cfg, dataset.manifest_path, cache=cache)

    assert result.report.attack_count == 40 and result.report.bona_fide_count == 40
    assert len(result.repeats) == 5
    assert result.report.hter <= 2.0


def test_majority_vote_beats_resize_baseline(border_ring_dataset):
    dataset, cache = border_ring_dataset
    cfg = ExperimentConfig(protocol=Protocol.FUSION_COMPARE, repeat_count=2)

    result = run_experiment(cfg, dataset.manifest_path, cache=cache)

    assert result.variants["majority_vote"].hter <= result.variants["resize_baseline"].hter


def test_null_artifact_gives_chance_level_eer(tmp_path):
    params = SynthParams(bona_fide_count=200, attack_count=200, artifact_contrast=0.0, seed=1)
    dataset = synth_generate(params, str(tmp_path / "eyes"))

    result = run_experiment(ExperimentConfig(repeat_count=5), dataset.manifest_path, cache=Cache())

    assert 40.0 <= result.report.eer <= 60.0


def test_soft_lenses_in_test_only_barely_move_hter(tmp_path):
    params = SynthParams(bona_fide_count=200, attack_count=200, soft_lens_count=100, seed=1)
    dataset = synth_generate(params, str(tmp_path / "eyes"))
    cache = Cache()

    hter = {}
    for protocol in (Protocol.SOFT_LENS_1, Protocol.SOFT_LENS_2):
        runner = ExperimentRunner(ExperimentConfig(protocol=protocol, repeat_count=5), dataset.manifest_path, cache=cache)
        result = runner.run()
        soft = {split: [r for r in records if r.lens_type == LensType.SOFT] for split, records in runner.splits.items()}
        assert len(soft[Split.TEST]) == 20
        if protocol == Protocol.SOFT_LENS_2:
            assert soft[Split.TRAIN] == [] and soft[Split.DEV] == []
        else:
            assert len(soft[Split.TRAIN]) == 60
        # soft lenses stay bona fide
        assert all(r.truth == PadLabel.BONA_FIDE for records in soft.values() for r in records)
        hter[protocol] = result.report.hter

    assert abs(hter[Protocol.SOFT_LENS_2] - hter[Protocol.SOFT_LENS_1]) <= 2.0
