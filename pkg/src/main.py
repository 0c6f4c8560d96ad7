import argparse
import json
import os
import sys
from typing import Optional

from colorama import Fore, Style, init
from dotenv import load_dotenv
from pydantic import ValidationError

from data.models import FusionStrategy, Split, StripeScore, SynthParams
from evaluation.metrics import det_points, evaluate, samples_from_decisions
from evaluation.ring_analysis import per_ring_eer
from harness.experiment import run_experiment
from harness.manifest import by_split, complete_splits, load_manifest
from harness.pipeline import Preprocessor, manifest_dir_of
from harness.synth import synth_generate
from stages.classifier import group_scores, import_scores, load_model, predict_proba, save_model, train
from stages.fusion import fuse, resize_baseline
from stages.normalization import clahe, rubber_sheet
from stages.segmentation import detect_circles, extend_boundaries, format_segmentation, resolve_segmentation_ref, write_segmentations
from stages.stripes import extract_stripes, sample_odd_stripes
from tools.imaging import export_texture_pgm, load_image, read_texture_dump, write_texture_dump
from tools.records import read_decisions_csv, write_decisions_csv, write_det_csv, write_json, write_profile_csv, write_scores_csv
from utils.config import TOOLKIT_VERSION, Settings, ensure_dir, load_experiment_config, load_settings, read_config_file
from utils.display import print_eval_report, print_ring_profile, print_variant_table
from utils.errors import ConfigError, MetricInputError, MsaError, OutputError
from utils.progress import progress
from utils.protocols import PROTOCOL_ORDER

# Load environment variables from .env file
load_dotenv()

init(autoreset=True)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so ``main`` owns the exit status."""

    def error(self, message):
        raise UsageError(message)


def _error_line(code: str, message: str) -> str:
    return f"error code={code} message={json.dumps(message)}"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, settings: Settings) -> int:
    fields = {
        "bona_fide_count": args.bona_fide,
        "attack_count": args.attack,
        "soft_lens_count": args.soft,
        "artifact": args.artifact,
        "artifact_contrast": args.contrast,
        "image_size": args.image_size,
        "noise_std": args.noise,
        "seed": args.seed,
    }
    try:
        params = SynthParams(**{k: v for k, v in fields.items() if v is not None})
    except ValidationError as e:
        raise ConfigError(f"invalid synth parameters: {e.errors()[0]['msg']}")
    dataset = synth_generate(params, args.out)
    print(f"{Fore.GREEN}Wrote {len(dataset.records)} images{Style.RESET_ALL} to {Fore.CYAN}{args.out}{Style.RESET_ALL}")
    print(f"Manifest: {dataset.manifest_path}")
    return EXIT_OK


def cmd_segment(args, settings: Settings) -> int:
    segs = []
    for path in args.images:
        seg = detect_circles(load_image(path), settings.detector, os.path.basename(path))
        segs.append(seg)
        print(f"{Fore.CYAN}{path}{Style.RESET_ALL} {format_segmentation(seg)}")
    write_segmentations(args.out, segs, header="pupil_cx pupil_cy pupil_r iris_cx iris_cy iris_r")
    return EXIT_OK


def cmd_normalize(args, settings: Settings) -> int:
    norm = settings.normalization
    img = load_image(args.image)
    seg = resolve_segmentation_ref(args.segmentation, ".")
    boundaries = extend_boundaries(seg, norm.s1, norm.s2)
    tex = rubber_sheet(img, boundaries, norm.width, norm.height)
    if not args.no_clahe:
        tex = clahe(tex, norm.clip_limit, norm.tiles_x, norm.tiles_y)
    write_texture_dump(tex, args.out)
    if args.pgm:
        export_texture_pgm(tex, args.pgm)
    print(f"{Fore.GREEN}Texture {tex.width}x{tex.height}{Style.RESET_ALL} written to {args.out}")
    return EXIT_OK


def cmd_stripes(args, settings: Settings) -> int:
    height = args.height or settings.stripes.height
    stride = args.stride or settings.stripes.stride
    tex = read_texture_dump(args.texture)
    stripe_set = extract_stripes(tex, height, stride, source_id=os.path.basename(args.texture))
    sample_k = args.sample_k or settings.stripes.sample_k
    if sample_k is not None:
        stripe_set = sample_odd_stripes(stripe_set, sample_k, settings.seed)
    if args.out:
        out = ensure_dir(args.out)
        for stripe in stripe_set.stripes:
            write_texture_dump(stripe.values, str(out / f"stripe_{stripe.row_offset:03d}.msat"))
    offsets = ", ".join(str(s.row_offset) for s in stripe_set.stripes)
    print(f"{Fore.GREEN}{len(stripe_set)} stripes{Style.RESET_ALL} of {height} rows at offsets {offsets}")
    return EXIT_OK


def _prepared(manifest_path: str, settings: Settings):
    records = complete_splits(load_manifest(manifest_path), settings.seed)
    return records, by_split(records), Preprocessor(settings, manifest_dir_of(manifest_path))


def cmd_train(args, settings: Settings) -> int:
    height = args.height or settings.stripes.height
    stride = args.stride or settings.stripes.stride
    _, splits, pre = _prepared(args.manifest, settings)

    def stack(split: Split):
        records = splits[split]
        rows = pre.feature_rows(records, height, stride)
        labels = [r.truth for r, m in zip(records, rows) for _ in range(len(m))]
        return [row for m in rows for row in m], labels

    X, y = stack(Split.TRAIN)
    X_dev, y_dev = stack(Split.DEV) if splits[Split.DEV] else (None, None)
    model = train(
        X,
        y,
        X_dev,
        y_dev,
        cfg=settings.train_config_for(settings.seed),
        feature_config=settings.feature_config_for(height),
    )
    save_model(model, args.out)
    meta = model.training_meta
    print(
        f"{Fore.GREEN}Model saved{Style.RESET_ALL} to {args.out} "
        f"(epochs {meta.epochs_run}, best epoch {meta.best_epoch}, dev loss {meta.best_dev_loss:.4f})"
    )
    return EXIT_OK


def cmd_score(args, settings: Settings) -> int:
    model = load_model(args.model)
    height = model.feature_config.stripe_height
    stride = args.stride or settings.stripes.stride
    _, splits, pre = _prepared(args.manifest, settings)
    records = splits[Split(args.split)]
    rows = []
    for record, matrix in zip(records, pre.feature_rows(records, height, stride)):
        idx = pre.sampled_indices(record, height, stride, settings.stripes.sample_k, settings.seed)
        for i, p in zip(idx, predict_proba(model, matrix[idx])):
            rows.append((record.image_id, StripeScore(p_attack=float(p), stripe_offset=int(i) * stride)))
    write_scores_csv(args.out, rows)
    print(f"{Fore.GREEN}{len(rows)} stripe scores{Style.RESET_ALL} for {len(records)} images written to {args.out}")
    return EXIT_OK


def cmd_fuse(args, settings: Settings) -> int:
    strategy = FusionStrategy(args.strategy)
    threshold = settings.decision_threshold if args.threshold is None else args.threshold
    if strategy == FusionStrategy.RESIZE_BASELINE:
        if not (args.manifest and args.model):
            raise UsageError("resize_baseline needs --manifest and --model")
        model = load_model(args.model)
        _, splits, pre = _prepared(args.manifest, settings)
        decisions = [
            (r.image_id, resize_baseline(pre.texture(r), model, model.feature_config.stripe_height, threshold))
            for r in splits[Split(args.split)]
        ]
    else:
        if not args.scores:
            raise UsageError(f"{strategy.value} needs --scores")
        grouped = group_scores(import_scores(args.scores))
        decisions = [(image_id, fuse(strategy, scores, threshold)) for image_id, scores in grouped.items()]
    write_decisions_csv(args.out, decisions)
    attacks = sum(d.label.value == "attack" for _, d in decisions)
    print(f"{Fore.GREEN}{len(decisions)} decisions{Style.RESET_ALL} ({attacks} attack) written to {args.out}")
    return EXIT_OK


def cmd_eval(args, settings: Settings) -> int:
    decisions = read_decisions_csv(args.decisions)
    truths = {r.image_id: r.truth for r in load_manifest(args.manifest)}
    unknown = sorted(set(decisions) - set(truths))
    if unknown:
        raise MetricInputError(f"{len(unknown)} decisions have no manifest record (first: {unknown[0]})")
    samples = samples_from_decisions(decisions, truths)
    report = evaluate(samples)
    print_eval_report(report)
    if args.out:
        write_json(args.out, report)
    if args.det:
        write_det_csv(args.det, det_points(samples))
    return EXIT_OK


def cmd_rings(args, settings: Settings) -> int:
    records, _, pre = _prepared(args.manifest, settings)
    profile = per_ring_eer(records, args.n, args.ring_height, settings.train_config_for(settings.seed), pre)
    write_profile_csv(args.out, profile)
    write_json(
        os.path.splitext(args.out)[0] + ".json",
        {
            "format_version": 1,
            "toolkit_version": TOOLKIT_VERSION,
            "ring_count": args.n,
            "ring_texture_height": args.ring_height,
            "settings": settings,
            "manifest": args.manifest,
            "profile": profile,
        },
    )
    print_ring_profile(profile)
    return EXIT_OK


def cmd_experiment(args, settings: Settings) -> int:
    seed = args.seed
    if seed is None and "seed" not in read_config_file(args.config).get("experiment", {}):
        seed = settings.seed
    cfg = load_experiment_config(
        args.config,
        {
            "protocol": args.protocol,
            "stripe_height": args.height,
            "stride": args.stride,
            "fusion": args.fusion,
            "seed": seed,
            "repeat_count": args.repeats,
            "sample_k": args.sample_k,
            "ring_count": args.ring_count,
            "include_baseline": True if args.baseline else None,
        },
    )
    result = run_experiment(cfg, args.manifest, args.out, settings)
    progress.stop()
    print_variant_table(result.variants, result.main_variant, title=f"PROTOCOL {cfg.protocol.value.upper()}")
    if result.ring_profile is not None:
        print_ring_profile(result.ring_profile)
    print(f"\nReport written to {Fore.CYAN}{os.path.join(args.out, 'report.json')}{Style.RESET_ALL}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "segment": cmd_segment,
    "normalize": cmd_normalize,
    "stripes": cmd_stripes,
    "train": cmd_train,
    "score": cmd_score,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "rings": cmd_rings,
    "experiment": cmd_experiment,
}

# commands long enough to warrant the live progress table
LIVE_COMMANDS = {"synth", "train", "rings", "experiment"}


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Base seed (overrides MSA_SEED and the config file)")
    common.add_argument("--config", type=str, help="JSON settings file")
    common.add_argument("--workers", type=int, help="Preprocessing threads")
    common.add_argument("--no-progress", action="store_true", help="Disable the live progress table")

    parser = ArgumentParser(prog="msa", description="Iris presentation attack detection with micro-stripes")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--bona-fide", type=int, help="Bona fide image count")
    p.add_argument("--attack", type=int, help="Attack image count")
    p.add_argument("--soft", type=int, help="Soft lens (bona fide) image count")
    p.add_argument("--artifact", choices=["border_ring", "dot_print"], help="Attack artifact")
    p.add_argument("--contrast", type=float, help="Artifact contrast in gray levels")
    p.add_argument("--image-size", type=int, help="Square image side in pixels")
    p.add_argument("--noise", type=float, help="Sensor noise standard deviation")

    p = sub.add_parser("segment", parents=[common], help="Detect pupil and iris circles")
    p.add_argument("images", nargs="+", help="Eye images")
    p.add_argument("--out", required=True, help="Segmentation file, one line per image")

    p = sub.add_parser("normalize", parents=[common], help="Unwrap and enhance one iris")
    p.add_argument("--image", required=True)
    p.add_argument("--segmentation", required=True, help="Segmentation file, optionally with #line")
    p.add_argument("--out", required=True, help="Texture dump (MSAT)")
    p.add_argument("--pgm", help="Also export an 8-bit PGM/PNG preview")
    p.add_argument("--no-clahe", action="store_true", help="Skip contrast enhancement")

    p = sub.add_parser("stripes", parents=[common], help="Cut micro-stripes from a texture dump")
    p.add_argument("--texture", required=True)
    p.add_argument("--height", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--sample-k", type=int, help="Draw an odd number of stripes")
    p.add_argument("--out", help="Directory for per-stripe dumps")

    p = sub.add_parser("train", parents=[common], help="Train the stripe classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="Model JSON")
    p.add_argument("--height", type=int)
    p.add_argument("--stride", type=int)

    p = sub.add_parser("score", parents=[common], help="Score every stripe of a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="Score CSV")
    p.add_argument("--split", choices=[s.value for s in Split], default=Split.TEST.value)
    p.add_argument("--stride", type=int)

    p = sub.add_parser("fuse", parents=[common], help="Fuse stripe scores into image decisions")
    p.add_argument("--strategy", choices=[s.value for s in FusionStrategy], default=FusionStrategy.MAJORITY_VOTE.value)
    p.add_argument("--scores", help="Score CSV")
    p.add_argument("--out", required=True, help="Decision CSV")
    p.add_argument("--threshold", type=float)
    p.add_argument("--manifest", help="Manifest (resize_baseline only)")
    p.add_argument("--model", help="Model JSON (resize_baseline only)")
    p.add_argument("--split", choices=[s.value for s in Split], default=Split.TEST.value)

    p = sub.add_parser("eval", parents=[common], help="Compute PAD error rates")
    p.add_argument("--decisions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="Report JSON")
    p.add_argument("--det", help="DET operating points CSV")

    p = sub.add_parser("rings", parents=[common], help="Per-ring EER profile")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int, default=10, help="Ring count")
    p.add_argument("--ring-height", type=int, default=16, help="Rows per unwrapped ring")
    p.add_argument("--out", required=True, help="Profile CSV")

    p = sub.add_parser("experiment", parents=[common], help="Run an experiment protocol")
    p.add_argument("--protocol", choices=[value for _, value in PROTOCOL_ORDER])
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--height", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--fusion", choices=[s.value for s in FusionStrategy])
    p.add_argument("--repeats", type=int)
    p.add_argument("--sample-k", type=int)
    p.add_argument("--ring-count", type=int)
    p.add_argument("--baseline", action="store_true", help="Also run the full-texture baseline")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(_error_line("usage", str(e)), file=sys.stderr)
        return EXIT_USAGE

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers

    live = args.command in LIVE_COMMANDS and not args.no_progress
    try:
        settings = load_settings(args.config, overrides)
        if live:
            progress.start()
        return COMMANDS[args.command](args, settings)
    except UsageError as e:
        print(_error_line("usage", str(e)), file=sys.stderr)
        return EXIT_USAGE
    except MsaError as e:
        print(_error_line(e.code, str(e)), file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        print(_error_line(OutputError.code, str(e)), file=sys.stderr)
        return EXIT_FAILURE
    finally:
        progress.stop()


if __name__ == "__main__":
    sys.exit(main())
