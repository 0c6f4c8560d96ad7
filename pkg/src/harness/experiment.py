"""Experiment protocols: repeated train/score/fuse/evaluate runs with provenance."""

import os
from typing import Optional

import numpy as np
from pydantic import BaseModel

from data.cache import Cache
from data.models import (
    FORMAT_VERSION,
    ClassifierModel,
    EvalReport,
    ExperimentConfig,
    FusionStrategy,
    ManifestRecord,
    PadDecision,
    Protocol,
    RingProfile,
    ScoredSample,
    Split,
    StripeScore,
)
from evaluation.metrics import average_reports, eer, evaluate, samples_from_decisions
from evaluation.ring_analysis import mean_profile, per_ring_eer
from harness.manifest import by_split, complete_splits, load_manifest, require_both_classes
from harness.pipeline import Preprocessor, manifest_dir_of
from stages.classifier import predict_proba, save_model, train
from stages.fusion import fuse, resize_baseline
from stages.stripes import stripe_count
from tools.records import write_decisions_csv, write_json, write_profile_csv, write_scores_csv
from utils.config import TOOLKIT_VERSION, Settings, derive_seed, ensure_dir, file_sha256
from utils.display import format_report_table
from utils.errors import ConfigError
from utils.progress import progress
from utils.protocols import get_display_name, get_record_filter

BASELINE_VARIANT = "full_texture_baseline"


class RepeatResult(BaseModel):
    index: int
    seed: int
    main_variant: str
    variants: dict[str, EvalReport]
    ring_profile: Optional[RingProfile] = None


class ExperimentResult(BaseModel):
    protocol: Protocol
    main_variant: str
    report: EvalReport
    variants: dict[str, EvalReport]
    repeats: list[RepeatResult]
    ring_profile: Optional[RingProfile] = None
    provenance: dict


class _Variant(BaseModel):
    name: str
    stripe_height: int
    strategy: FusionStrategy


class ExperimentRunner:
    def __init__(
        self,
        cfg: ExperimentConfig,
        manifest_path: str,
        out_dir: Optional[str] = None,
        settings: Optional[Settings] = None,
        cache: Optional[Cache] = None,
    ):
        """
        :param cfg: Protocol, stripe geometry, fusion strategy, seeds and repeat count.
        :param manifest_path: Dataset manifest CSV; relative paths resolve against its directory.
        :param out_dir: Where reports and per-repeat files go; nothing is written when None.
        :param settings: Preprocessing, feature and training settings.
        :param cache: Texture and feature cache shared across runs. Without one the
            global cache is used and cleared once the run finishes.
        """
        self.cfg = cfg
        self.manifest_path = manifest_path
        self.out_dir = out_dir
        self.settings = settings or Settings()
        self.owns_cache = cache is None
        self.preprocessor = Preprocessor(self.settings, manifest_dir_of(manifest_path), cache)
        self.variants = self._plan_variants()
        self.main_variant = self._main_variant()

        self.records: list[ManifestRecord] = []
        self.splits: dict[Split, list[ManifestRecord]] = {}
        self.features: dict[int, dict[str, np.ndarray]] = {}

    # -- planning ---------------------------------------------------------

    def _plan_variants(self) -> list[_Variant]:
        cfg = self.cfg
        if cfg.protocol == Protocol.STRIPE_ABLATION:
            return [_Variant(name=f"h{h}", stripe_height=h, strategy=cfg.fusion) for h in cfg.ablation_heights]
        if cfg.protocol == Protocol.FUSION_COMPARE:
            return [_Variant(name=s.value, stripe_height=cfg.stripe_height, strategy=s) for s in FusionStrategy]
        return [_Variant(name=cfg.fusion.value, stripe_height=cfg.stripe_height, strategy=cfg.fusion)]

    def _main_variant(self) -> str:
        if self.cfg.protocol == Protocol.STRIPE_ABLATION:
            names = [v.name for v in self.variants]
            preferred = f"h{self.cfg.stripe_height}"
            return preferred if preferred in names else names[0]
        if self.cfg.protocol == Protocol.FUSION_COMPARE:
            return FusionStrategy.MAJORITY_VOTE.value
        return self.variants[0].name

    @property
    def heights(self) -> list[int]:
        heights = sorted({v.stripe_height for v in self.variants})
        if self.cfg.include_baseline:
            heights.append(self.settings.normalization.height)
        return sorted(set(heights))

    def check_geometry(self) -> None:
        """Every majority-vote variant must end up voting over an odd stripe count."""
        texture_height = self.settings.normalization.height
        for variant in self.variants:
            h = variant.stripe_height
            if variant.strategy != FusionStrategy.MAJORITY_VOTE or not 1 <= h <= texture_height:
                continue
            count = stripe_count(texture_height, h, self.cfg.stride)
            k = self.cfg.sample_k
            if k is None and count % 2 == 0:
                raise ConfigError(
                    f"variant {variant.name}: stripe height {h} with stride {self.cfg.stride} "
                    f"gives {count} stripes, majority vote needs an odd count"
                )
            if k is not None and k > count:
                raise ConfigError(f"variant {variant.name}: cannot sample {k} of {count} stripes")

    def prepare(self) -> None:
        """Load, complete and filter the manifest, then featurize every record.

        All geometry, manifest and protocol errors surface here, before any training.
        """
        self.check_geometry()
        progress.update_status("experiment", None, "Loading manifest")
        records = complete_splits(load_manifest(self.manifest_path), self.cfg.seed)
        records = get_record_filter(self.cfg.protocol)(records)
        splits = by_split(records)
        require_both_classes(splits[Split.TRAIN], Split.TRAIN)
        require_both_classes(splits[Split.TEST], Split.TEST)
        if self.cfg.include_baseline:
            require_both_classes(splits[Split.DEV], Split.DEV)
        self.records, self.splits = records, splits

        for h in self.heights:
            rows = self.preprocessor.feature_rows(records, h, self.cfg.stride)
            self.features[h] = {r.image_id: m for r, m in zip(records, rows)}

    # -- one repeat -------------------------------------------------------

    def _stack(self, split: Split, height: int) -> tuple[Optional[np.ndarray], list]:
        records = self.splits[split]
        if not records:
            return None, []
        X = np.vstack([self.features[height][r.image_id] for r in records])
        y = [r.truth for r in records for _ in range(len(self.features[height][r.image_id]))]
        return X, y

    def _train(self, height: int, seed: int) -> ClassifierModel:
        X, y = self._stack(Split.TRAIN, height)
        X_dev, y_dev = self._stack(Split.DEV, height)
        return train(
            X,
            y,
            X_dev,
            y_dev,
            cfg=self.settings.train_config_for(derive_seed(seed, "train", height)),
            feature_config=self.settings.feature_config_for(height),
            name="classifier",
        )

    def _stripe_scores(self, model: ClassifierModel, record: ManifestRecord, height: int, seed: int) -> list[StripeScore]:
        stride = self.cfg.stride
        idx = self.preprocessor.sampled_indices(record, height, stride, self.cfg.sample_k, seed)
        probs = predict_proba(model, self.features[height][record.image_id][idx])
        return [StripeScore(p_attack=float(p), stripe_offset=int(i) * stride) for p, i in zip(probs, idx)]

    def _decide(self, model: ClassifierModel, variant: _Variant, scores: dict[str, list[StripeScore]]) -> dict[str, PadDecision]:
        threshold = self.settings.decision_threshold
        decisions = {}
        for record in self.splits[Split.TEST]:
            if variant.strategy == FusionStrategy.RESIZE_BASELINE:
                tex = self.preprocessor.texture(record)
                decisions[record.image_id] = resize_baseline(tex, model, variant.stripe_height, threshold)
            else:
                decisions[record.image_id] = fuse(variant.strategy, scores[record.image_id], threshold)
        return decisions

    def _report(self, decisions: dict[str, PadDecision]) -> EvalReport:
        test = self.splits[Split.TEST]
        truths = {r.image_id: r.truth for r in test}
        return evaluate(samples_from_decisions(decisions, truths, [r.image_id for r in test]))

    def _baseline(self, seed: int) -> EvalReport:
        """Whole texture as one stripe, thresholded at the dev-set EER point."""
        height = self.settings.normalization.height
        model = self._train(height, seed)
        dev = self.splits[Split.DEV]
        dev_probs = predict_proba(model, np.vstack([self.features[height][r.image_id] for r in dev]))
        _, threshold = eer([ScoredSample(image_id=r.image_id, truth=r.truth, score=float(p)) for r, p in zip(dev, dev_probs)])
        decisions = {}
        for record in self.splits[Split.TEST]:
            p = float(predict_proba(model, self.features[height][record.image_id])[0])
            decisions[record.image_id] = fuse(FusionStrategy.MEAN_SCORE, [StripeScore(p_attack=p, stripe_offset=0)], threshold)
        return self._report(decisions)

    def run_repeat(self, index: int, seed: int) -> RepeatResult:
        progress.update_status("experiment", f"repeat {index + 1}/{self.cfg.repeat_count}", "Training")
        variants: dict[str, EvalReport] = {}
        models: dict[int, ClassifierModel] = {}
        main_files = None
        for variant in self.variants:
            h = variant.stripe_height
            if h not in models:
                models[h] = self._train(h, seed)
            scores = {r.image_id: self._stripe_scores(models[h], r, h, seed) for r in self.splits[Split.TEST]}
            decisions = self._decide(models[h], variant, scores)
            variants[variant.name] = self._report(decisions)
            if variant.name == self.main_variant:
                main_files = (models[h], scores, decisions)

        if self.cfg.include_baseline:
            variants[BASELINE_VARIANT] = self._baseline(seed)

        profile = None
        if self.cfg.protocol == Protocol.RING_ANALYSIS:
            progress.update_status("experiment", f"repeat {index + 1}/{self.cfg.repeat_count}", "Ring analysis")
            profile = per_ring_eer(
                self.records,
                self.cfg.ring_count,
                self.cfg.ring_texture_height,
                self.settings.train_config_for(derive_seed(seed, "rings")),
                self.preprocessor,
            )

        result = RepeatResult(index=index, seed=seed, main_variant=self.main_variant, variants=variants, ring_profile=profile)
        if self.out_dir is not None:
            self._write_repeat(result, *main_files)
        return result

    # -- outputs ----------------------------------------------------------

    def _write_repeat(
        self,
        result: RepeatResult,
        model: ClassifierModel,
        scores: dict[str, list[StripeScore]],
        decisions: dict[str, PadDecision],
    ) -> None:
        target = ensure_dir(os.path.join(self.out_dir, f"repeat_{result.index}"))
        write_json(str(target / "report.json"), {"format_version": FORMAT_VERSION, **result.model_dump(mode="json")})
        save_model(model, str(target / "model.json"))
        write_scores_csv(str(target / "scores.csv"), [(image_id, s) for image_id, rows in scores.items() for s in rows])
        write_decisions_csv(str(target / "decisions.csv"), list(decisions.items()))
        if result.ring_profile is not None:
            write_profile_csv(str(target / "rings.csv"), result.ring_profile)

    def provenance(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "toolkit_version": TOOLKIT_VERSION,
            "settings": self.settings.model_dump(mode="json"),
            "experiment": self.cfg.model_dump(mode="json"),
            "repeat_seeds": self.cfg.repeat_seeds,
            "manifest": {"path": self.manifest_path, "sha256": file_sha256(self.manifest_path)},
        }

    def run(self) -> ExperimentResult:
        try:
            return self._run()
        finally:
            if self.owns_cache:
                self.preprocessor.cache.clear()

    def _run(self) -> ExperimentResult:
        self.prepare()
        repeats = [self.run_repeat(i, seed) for i, seed in enumerate(self.cfg.repeat_seeds)]
        names = list(repeats[0].variants)
        averaged = {name: average_reports([r.variants[name] for r in repeats]) for name in names}
        profiles = [r.ring_profile for r in repeats if r.ring_profile is not None]
        result = ExperimentResult(
            protocol=self.cfg.protocol,
            main_variant=self.main_variant,
            report=averaged[self.main_variant],
            variants=averaged,
            repeats=repeats,
            ring_profile=mean_profile(profiles) if profiles else None,
            provenance=self.provenance(),
        )
        if self.out_dir is not None:
            self.write(result)
        progress.update_status("experiment", None, "Done")
        return result

    def write(self, result: ExperimentResult) -> None:
        target = ensure_dir(self.out_dir)
        write_json(str(target / "report.json"), {"format_version": FORMAT_VERSION, **result.model_dump(mode="json")})
        with open(target / "report.txt", "w", encoding="utf-8") as handle:
            handle.write(format_report_table(result.variants, title=f"protocol {get_display_name(result.protocol)}"))
            handle.write("\n")
        if result.ring_profile is not None:
            write_profile_csv(str(target / "rings.csv"), result.ring_profile)


def run_experiment(
    cfg: ExperimentConfig,
    manifest_path: str,
    out_dir: Optional[str] = None,
    settings: Optional[Settings] = None,
    cache: Optional[Cache] = None,
) -> ExperimentResult:
    """Run a protocol end to end and return the averaged report with per-repeat details."""
    runner = ExperimentRunner(cfg, manifest_path, out_dir, settings, cache)
    try:
        return runner.run()
    except Exception:
        progress.update_status("experiment", None, "Error")
        raise
