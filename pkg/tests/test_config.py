import json

import pytest

from ccrkit.config import ConfigError, RunConfig, from_dict, load_config


def write(tmp_path, data):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(data))
    return p


def test_defaults():
    cfg = load_config(None)
    assert cfg.seeds == (1, 2, 3)
    assert cfg.corpus.size == 1100
    assert cfg.experiments.missing_train_wers == (0.16, 0.41, 0.64)


def test_nested_values_are_coerced(tmp_path):
    cfg = load_config(write(tmp_path, {"models": {"matcher": {"epochs": 3, "lr": 1}}, "seeds": [4]}))
    assert cfg.models.matcher.epochs == 3 and cfg.models.matcher.lr == 1.0
    assert cfg.seeds == (4,)


@pytest.mark.parametrize("data,match", [
    ({"corpus": {"sise": 10}}, "sise"),
    ({"seedz": [1]}, "seedz"),
    ({"models": {"matcher": {"epochs": "ten"}}}, "integer"),
    ({"models": {"matcher": {"epochs": True}}}, "integer"),
    ({"experiments": {"run": ["wer", "nope"]}}, "nope"),
    ({"seeds": []}, "seed"),
    ({"corpus": {"region_file": "/no/such/file.json"}}, "region_file"),
    ({"models": {"fresh_noise_per_epoch": 1}}, "true/false"),
])
def test_strict_rejections(tmp_path, data, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, data))


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        load_config(p)


def test_digest_tracks_content():
    assert RunConfig().digest() == RunConfig().digest()
    assert from_dict(RunConfig, {"seeds": [9]}).digest() != RunConfig().digest()


def test_round_trip_through_dict():
    cfg = from_dict(RunConfig, {"experiments": {"test_wers": [0.0, 0.5]}})
    assert from_dict(RunConfig, json.loads(json.dumps(cfg.to_dict()))) == cfg
