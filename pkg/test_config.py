import json
import os
import sys

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

import pytest

from data.models import FusionStrategy, Protocol
from utils.config import derive_seed, ensure_dir, load_experiment_config, load_settings
from utils.errors import ConfigError


def _config(tmp_path, payload):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload) if not isinstance(payload, str) else payload)
    return str(path)


def test_defaults():
    settings = load_settings(use_env=False)
    assert (settings.normalization.width, settings.normalization.height) == (512, 64)
    assert (settings.stripes.height, settings.stripes.stride) == (32, 4)
    assert settings.decision_threshold == 0.5


def test_file_then_overrides(tmp_path):
    path = _config(tmp_path, {"seed": 3, "normalization": {"s1": 0.3}, "experiment": {"repeat_count": 2}})

    settings = load_settings(path, {"seed": 11}, use_env=False)

    assert settings.seed == 11
    assert settings.normalization.s1 == 0.3
    assert settings.normalization.s2 == 0.4


def test_environment_layer(monkeypatch, tmp_path):
    monkeypatch.setenv("MSA_SEED", "7")
    monkeypatch.setenv("MSA_CLIP_LIMIT", "3.5")
    settings = load_settings()
    assert settings.seed == 7
    assert settings.normalization.clip_limit == 3.5

    # the config file wins over the environment
    assert load_settings(_config(tmp_path, {"seed": 1})).seed == 1


@pytest.mark.parametrize(
    "payload",
    [
        "{not json",
        "[1, 2]",
        {"workers": 0},
        {"normalization": {"clip_limit": -1}},
    ],
)
def test_bad_settings(tmp_path, payload):
    with pytest.raises(ConfigError):
        load_settings(_config(tmp_path, payload), use_env=False)


def test_experiment_section(tmp_path):
    path = _config(tmp_path, {"experiment": {"protocol": "fusion_compare", "repeat_count": 3, "seed": 5}})

    cfg = load_experiment_config(path, {"repeat_count": None, "fusion": "mean_score"})

    assert cfg.protocol == Protocol.FUSION_COMPARE
    assert cfg.repeat_count == 3
    assert cfg.fusion == FusionStrategy.MEAN_SCORE
    assert cfg.repeat_seeds == [5, 6, 7]
    with pytest.raises(ConfigError):
        load_experiment_config(None, {"sample_k": 4})


def test_derived_seeds():
    assert derive_seed(1, "ring", 3) == derive_seed(1, "ring", 3)
    assert len({derive_seed(1, "ring", i) for i in range(10)}) == 10
    assert derive_seed(1, "split", "attack") != derive_seed(2, "split", "attack")
    assert 0 <= derive_seed(2**40, "x") < 2**32


def test_ensure_dir(tmp_path):
    target = ensure_dir(str(tmp_path / "a" / "b"))
    assert target.is_dir()
