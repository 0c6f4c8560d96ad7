"""Dataset manifests: CSV parsing, split completion and protocol record filters."""

import os
from collections import defaultdict
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from data.models import LensType, ManifestRecord, PadLabel, Split
from utils.config import derive_seed
from utils.errors import DuplicateRecordError, ManifestConsistencyError, ManifestParseError, ProtocolMismatchError

MANIFEST_COLUMNS = ["image_id", "path", "split", "truth", "lens_type", "segmentation_ref"]
DEFAULT_SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
DEV_CARVE_FRACTION = 0.25


def _enum(enum_cls, raw: str, column: str, line: int):
    try:
        return enum_cls(raw.strip().lower())
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise ManifestParseError(f"bad {column} {raw!r} (expected one of {allowed})", line=line)


def parse_manifest_row(row: dict, line: int) -> ManifestRecord:
    split_raw = row["split"].strip()
    ref = row["segmentation_ref"].strip()
    fields = {
        "image_id": row["image_id"].strip(),
        "path": row["path"].strip(),
        "split": _enum(Split, split_raw, "split", line) if split_raw else None,
        "truth": _enum(PadLabel, row["truth"], "truth", line),
        "lens_type": _enum(LensType, row["lens_type"], "lens_type", line),
        "segmentation_ref": ref or None,
    }
    if not fields["image_id"] or not fields["path"]:
        raise ManifestParseError("image_id and path are required", line=line)
    try:
        return ManifestRecord(**fields)
    except ValidationError as e:
        raise ManifestConsistencyError(e.errors()[0]["msg"].removeprefix("Value error, "), line=line)


def load_manifest(path: str) -> list[ManifestRecord]:
    """Read and validate a manifest CSV.

    Line numbers in errors count the header as line 1. Record paths are kept
    as written; they resolve against the manifest directory.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except FileNotFoundError:
        raise ManifestParseError(f"manifest {path} does not exist")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ManifestParseError(f"cannot parse manifest {path}: {e}")

    columns = [c.strip() for c in frame.columns]
    if columns != MANIFEST_COLUMNS:
        raise ManifestParseError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}", line=1)
    frame.columns = columns

    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    for line, row in enumerate(frame.to_dict("records"), start=2):
        record = parse_manifest_row(row, line)
        if record.image_id in seen:
            raise DuplicateRecordError(f"duplicate image_id {record.image_id!r} (first on line {seen[record.image_id]})", line=line)
        seen[record.image_id] = line
        records.append(record)
    if not records:
        raise ManifestParseError(f"manifest {path} holds no records")
    return records


def write_manifest(path: str, records: Iterable[ManifestRecord]) -> None:
    rows = [
        {
            "image_id": r.image_id,
            "path": r.path,
            "split": r.split.value if r.split else "",
            "truth": r.truth.value,
            "lens_type": r.lens_type.value,
            "segmentation_ref": r.segmentation_ref or "",
        }
        for r in records
    ]
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(path, index=False, lineterminator="\n")


def resolve_path(record: ManifestRecord, manifest_dir: str) -> str:
    if os.path.isabs(record.path):
        return record.path
    return os.path.normpath(os.path.join(manifest_dir, record.path))


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _group_key(record: ManifestRecord) -> str:
    # soft lenses get their own group so every split sees a share of them
    if record.lens_type == LensType.SOFT:
        return "soft"
    return record.truth.value


def split_counts(n: int, fractions: tuple[float, float, float] = DEFAULT_SPLIT_FRACTIONS) -> tuple[int, int, int]:
    n_train = int(round(n * fractions[0]))
    n_dev = min(int(round(n * fractions[1])), n - n_train)
    return n_train, n_dev, n - n_train - n_dev


def complete_splits(records: list[ManifestRecord], seed: int) -> list[ManifestRecord]:
    """Fill in missing splits; explicit splits are never changed.

    Records without a split are assigned train/dev/test 60/20/20 per class.
    When the result still has no dev records, a quarter of each class's train
    records moves to dev. Both steps use seeded permutations.
    """
    updates: dict[str, Split] = {}

    unassigned = defaultdict(list)
    for r in records:
        if r.split is None:
            unassigned[_group_key(r)].append(r.image_id)
    for group, ids in sorted(unassigned.items()):
        order = np.random.default_rng(derive_seed(seed, "split", group)).permutation(len(ids))
        n_train, n_dev, _ = split_counts(len(ids))
        for rank, idx in enumerate(order):
            updates[ids[idx]] = Split.TRAIN if rank < n_train else Split.DEV if rank < n_train + n_dev else Split.TEST

    def split_of(r: ManifestRecord) -> Optional[Split]:
        return updates.get(r.image_id, r.split)

    if not any(split_of(r) == Split.DEV for r in records):
        train_groups = defaultdict(list)
        for r in records:
            if split_of(r) == Split.TRAIN:
                train_groups[_group_key(r)].append(r.image_id)
        for group, ids in sorted(train_groups.items()):
            order = np.random.default_rng(derive_seed(seed, "dev", group)).permutation(len(ids))
            n_dev = int(len(ids) * DEV_CARVE_FRACTION)
            for idx in order[:n_dev]:
                updates[ids[idx]] = Split.DEV

    return [r.model_copy(update={"split": updates[r.image_id]}) if r.image_id in updates else r for r in records]


def by_split(records: Iterable[ManifestRecord]) -> dict[Split, list[ManifestRecord]]:
    groups: dict[Split, list[ManifestRecord]] = {s: [] for s in Split}
    for r in records:
        if r.split is None:
            raise ManifestConsistencyError(f"record {r.image_id} has no split")
        groups[r.split].append(r)
    return groups


def require_both_classes(records: list[ManifestRecord], split: Split) -> None:
    labels = {r.truth for r in records}
    for label in PadLabel:
        if label not in labels:
            raise ProtocolMismatchError(f"{split.value} split has no {label.value} records")


# ---------------------------------------------------------------------------
# Protocol filters: these only drop records, labels are never touched
# ---------------------------------------------------------------------------


def _require_soft(records: list[ManifestRecord]) -> None:
    if not any(r.lens_type == LensType.SOFT for r in records):
        raise ProtocolMismatchError("soft lens protocols need soft lens records in the manifest")


def keep_all(records: list[ManifestRecord]) -> list[ManifestRecord]:
    return list(records)


def soft_in_train_and_test(records: list[ManifestRecord]) -> list[ManifestRecord]:
    _require_soft(records)
    return list(records)


def soft_in_test_only(records: list[ManifestRecord]) -> list[ManifestRecord]:
    _require_soft(records)
    kept = [r for r in records if r.lens_type != LensType.SOFT or r.split == Split.TEST]
    if not any(r.lens_type == LensType.SOFT for r in kept):
        raise ProtocolMismatchError("no soft lens records in the test split")
    return kept


def soft_excluded(records: list[ManifestRecord]) -> list[ManifestRecord]:
    _require_soft(records)
    return [r for r in records if r.lens_type != LensType.SOFT]
