"""CSV and JSON record files written and read by the pipeline."""

import json
import math
from typing import Iterable, Union

import pandas as pd
from pydantic import BaseModel, ValidationError

from data.models import FusionStrategy, PadDecision, PadLabel, RingProfile, StripeScore
from utils.errors import ScoreParseError, ScoreRangeError

DECISION_COLUMNS = ["image_id", "strategy", "fused_score", "label"]


def _write_frame(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def write_scores_csv(path: str, rows: Iterable[tuple[str, StripeScore]]) -> None:
    records = [
        {"image_id": image_id, "stripe_offset": s.stripe_offset, "p_attack": repr(s.p_attack)}
        for image_id, s in rows
    ]
    _write_frame(pd.DataFrame(records, columns=["image_id", "stripe_offset", "p_attack"]), path)


def write_decisions_csv(path: str, rows: Iterable[tuple[str, PadDecision]]) -> None:
    records = [
        {
            "image_id": image_id,
            "strategy": d.strategy.value,
            "fused_score": repr(d.fused_score),
            "label": d.label.value,
        }
        for image_id, d in rows
    ]
    _write_frame(pd.DataFrame(records, columns=DECISION_COLUMNS), path)


def read_decisions_csv(path: str) -> dict[str, PadDecision]:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise ScoreParseError(f"decision file {path} does not exist")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ScoreParseError(f"cannot parse decision file {path}: {e}")
    if list(frame.columns) != DECISION_COLUMNS:
        raise ScoreParseError(f"decision file header must be {','.join(DECISION_COLUMNS)}", line=1)

    decisions: dict[str, PadDecision] = {}
    for line, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            score = float(row.fused_score)
        except ValueError:
            raise ScoreParseError(f"bad fused_score {row.fused_score!r}", line=line)
        if not 0.0 <= score <= 1.0:
            raise ScoreRangeError(f"fused_score {score} outside [0, 1]", line=line)
        if row.image_id in decisions:
            raise ScoreParseError(f"duplicate decision for {row.image_id}", line=line)
        # vote counts are not part of the file; the label stands in as a single vote
        try:
            strategy = FusionStrategy(row.strategy)
            decisions[row.image_id] = PadDecision(
                label=PadLabel(row.label),
                fused_score=score,
                strategy=strategy,
                votes_attack=int(PadLabel(row.label) == PadLabel.ATTACK),
                votes_total=1,
            )
        except (ValueError, ValidationError) as e:
            raise ScoreParseError(f"bad decision row: {e}", line=line)
    return decisions


def write_profile_csv(path: str, profile: RingProfile) -> None:
    frame = pd.DataFrame(
        {
            "ring_index": list(range(len(profile.eers))),
            "eer": [repr(e) for e in profile.eers],
            "normalized": [repr(v) for v in profile.normalized],
        }
    )
    _write_frame(frame, path)


def write_det_csv(path: str, points: Iterable[tuple[float, float, float]]) -> None:
    frame = pd.DataFrame(
        [{"apcer": repr(a), "bpcer": repr(b), "threshold": _finite_or_label(t)} for a, b, t in points],
        columns=["apcer", "bpcer", "threshold"],
    )
    _write_frame(frame, path)


def _finite_or_label(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def to_jsonable(payload: Union[BaseModel, dict, list]):
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode="json")
    if isinstance(payload, dict):
        return {str(k): to_jsonable(v) for k, v in payload.items()}
    if isinstance(payload, (list, tuple)):
        return [to_jsonable(v) for v in payload]
    return payload


def write_json(path: str, payload: Union[BaseModel, dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(to_jsonable(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")
