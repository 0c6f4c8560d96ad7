"""Settings resolution: defaults, then environment (.env), then a JSON file."""

import hashlib
import json
import os
import zlib
from pathlib import Path
from typing import Any, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from data.models import (
    DetectorConfig,
    ExperimentConfig,
    FeatureConfig,
    NormalizationConfig,
    StripeConfig,
    TrainConfig,
)
from utils.errors import ConfigError, OutputError

TOOLKIT_VERSION = "0.3.0"

# Environment variable -> dotted settings path
ENV_OVERRIDES = {
    "MSA_SEED": "seed",
    "MSA_WORKERS": "workers",
    "MSA_S1": "normalization.s1",
    "MSA_S2": "normalization.s2",
    "MSA_CLIP_LIMIT": "normalization.clip_limit",
}


class Settings(BaseModel):
    detector: DetectorConfig = DetectorConfig()
    normalization: NormalizationConfig = NormalizationConfig()
    stripes: StripeConfig = StripeConfig()
    features: FeatureConfig = FeatureConfig()
    train: TrainConfig = TrainConfig()
    decision_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    workers: int = Field(default=4, ge=1)
    seed: int = 0

    def feature_config_for(self, stripe_height: int) -> FeatureConfig:
        return self.features.model_copy(update={"stripe_height": stripe_height})

    def train_config_for(self, seed: int) -> TrainConfig:
        return self.train.model_copy(update={"seed": seed})


def deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _set_dotted(target: dict, dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split(".")
    node = target
    for part in parents:
        node = node.setdefault(part, {})
    node[leaf] = value


def _env_layer() -> dict:
    layer: dict = {}
    for var, dotted in ENV_OVERRIDES.items():
        raw = os.environ.get(var)
        if raw is None or raw.strip() == "":
            continue
        _set_dotted(layer, dotted, raw.strip())
    return layer


def read_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}", line=e.lineno)
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def load_settings(config_path: Optional[str] = None, overrides: Optional[dict] = None, use_env: bool = True) -> Settings:
    """Build Settings from defaults, the environment, the JSON file and explicit overrides.

    The JSON file may carry an ``experiment`` object; it is ignored here and
    read by :func:`load_experiment_config`.
    """
    layer: dict = {}
    if use_env:
        load_dotenv()
        layer = deep_merge(layer, _env_layer())
    file_data = read_config_file(config_path)
    file_data = {k: v for k, v in file_data.items() if k != "experiment"}
    layer = deep_merge(layer, file_data)
    if overrides:
        layer = deep_merge(layer, overrides)
    try:
        return Settings.model_validate(layer)
    except ValidationError as e:
        raise ConfigError(f"invalid settings: {_first_error(e)}")


def load_experiment_config(config_path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    data = read_config_file(config_path).get("experiment", {})
    if not isinstance(data, dict):
        raise ConfigError("'experiment' must be a JSON object")
    if overrides:
        data = deep_merge(data, {k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {_first_error(e)}")


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    where = ".".join(str(p) for p in err.get("loc", ()))
    return f"{where}: {err.get('msg')}" if where else str(err.get("msg"))


def derive_seed(base: int, *parts: Any) -> int:
    """Stable 32-bit seed for (base, parts...) across processes and platforms."""
    entropy = [int(base) & 0xFFFFFFFF]
    for part in parts:
        if isinstance(part, (int, np.integer)):
            entropy.append(int(part) & 0xFFFFFFFF)
        else:
            entropy.append(zlib.crc32(str(part).encode("utf-8")))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ensure_dir(path: str) -> Path:
    target = Path(path)
    try:
        target.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot create output directory {path}: {e}")
    if not os.access(target, os.W_OK):
        raise OutputError(f"output directory {path} is not writable")
    return target
