from __future__ import annotations

import json

import pytest
import yaml

from funcfix.config import ENV_VAR, ConfigError, PipelineConfig, config_from_dict, load_config


def test_defaults_without_file(monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)
    cfg = load_config()
    assert cfg == PipelineConfig()
    assert cfg.simulate.frames == 50 and cfg.augment.free_slot_cap == 16


@pytest.mark.parametrize("suffix", ["yaml", "json"])
def test_load_yaml_and_json(tmp_path, suffix):
    doc = {"seed": 5, "simulate": {"frames": 80}, "realize": {"top_overhang": 0.02}}
    p = tmp_path / f"c.{suffix}"
    p.write_text(yaml.safe_dump(doc) if suffix == "yaml" else json.dumps(doc))
    cfg = load_config(str(p))
    assert cfg.seed == 5 and cfg.simulate.frames == 80
    assert cfg.realize.top_overhang == 0.02
    assert cfg.complete == PipelineConfig().complete


def test_env_fallback(tmp_path, monkeypatch):
    p = tmp_path / "env.yaml"
    p.write_text("parallelism: 4\n")
    monkeypatch.setenv(ENV_VAR, str(p))
    assert load_config().parallelism == 4
    # an explicit path wins over the environment
    q = tmp_path / "explicit.yaml"
    q.write_text("parallelism: 2\n")
    assert load_config(str(q)).parallelism == 2


def test_round_trip_through_json():
    cfg = config_from_dict({"augment": {"flip_probability": 0.25}, "input": {"corruption": "drop_top", "severity": 0.4}})
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert cfg.to_dict()["schema_version"] == 1


@pytest.mark.parametrize("doc, fragment", [
    ({"bogus": 1}, "unknown"),
    ({"simulate": {"framez": 3}}, "/simulate"),
    ({"seed": "zero"}, "integer"),
    ({"seed": True}, "integer"),
    ({"simulate": {"threshold": "small"}}, "number"),
    ({"simulate": {"frames": 1}}, "frames"),
    ({"parallelism": 0}, "parallelism"),
    ({"input": {"corruption": "nope"}}, "corruption"),
    ({"augment": {"weights": {"unknown_strategy": 1.0}}}, "unknown"),
    ({"schema_version": 2}, "schema_version"),
    ({"simulate": [1, 2]}, "mapping"),
])
def test_invalid_documents(doc, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config_from_dict(doc)


def test_unreadable_and_unparsable(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    assert load_config(str(p)) == PipelineConfig()
