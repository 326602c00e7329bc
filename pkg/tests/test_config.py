from __future__ import annotations

import json
from pathlib import Path

import pytest
import yaml

from gliomaflow.config import ENV_TIMEOUT, ENV_WORKERS, RunConfig
from gliomaflow.curation import Ruleset, default_ruleset
from gliomaflow.errors import ConfigError


def test_minimal_and_relative_paths(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump({"output_root": "out", "input_roots": ["in"]}))
    cfg = RunConfig.load(p, env={})
    assert cfg.output_root == tmp_path / "out"
    assert cfg.input_roots == [tmp_path / "in"]
    assert cfg.bin_width == 25.0 and cfg.alpha == 0.05 and cfg.workers == 1
    assert cfg.thresholds == {"t_et": 3.0, "t_nc": -3.0, "t_ed": 3.0}


def test_json_config(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps({"output_root": str(tmp_path), "thresholds": {"t_et": 2}}))
    assert RunConfig.load(p, env={}).thresholds["t_et"] == 2.0


def test_env_overrides(tmp_path):
    cfg = RunConfig.from_dict({"output_root": "o"}, tmp_path,
                              env={ENV_WORKERS: "3", ENV_TIMEOUT: "12"})
    assert cfg.workers == 3 and cfg.adapter_timeout == 12.0


@pytest.mark.parametrize("doc", [
    {"output_root": "o", "bogus": 1},
    {"input_roots": []},
    {"output_root": "o", "workers": 0},
    {"output_root": "o", "alpha": 1.5},
    {"output_root": "o", "bin_width": -1},
    {"output_root": "o", "thresholds": {"t_xx": 1}},
    {"output_root": "o", "adapters": {"Nope": {"mock": "x"}}},
    {"output_root": "o", "adapters": {"Registration": {"mock": "x", "command": ["a"]}}},
    {"output_root": "o", "adapters": {"Registration": {"command": "not-a-list"}}},
    {"output_root": "o", "ruleset": "missing.yaml"},
    {"output_root": "o", "atlas_path": "missing.nii"},
])
def test_invalid_configs(tmp_path, doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc, tmp_path, env={})


def test_bad_env_override(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"output_root": "o"}, tmp_path, env={ENV_WORKERS: "many"})


def test_unreadable_and_unparsable(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1,")
    with pytest.raises(ConfigError):
        RunConfig.load(bad)


def test_ruleset_file_is_parsed_eagerly(tmp_path):
    rules = tmp_path / "rules.yaml"
    rules.write_text(yaml.safe_dump({"min_instances": 0}))
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"output_root": "o", "ruleset": str(rules)}, tmp_path, env={})


def test_shipped_configs_load():
    root = Path(__file__).resolve().parents[1] / "configs"
    assert Ruleset.load(root / "ruleset.yaml").to_dict() == default_ruleset().to_dict()
    cfg = RunConfig.load(root / "run.example.yaml", env={})
    assert cfg.rules.to_dict() == default_ruleset().to_dict()
    assert set(cfg.adapters) == {"Registration", "BiasCorrection", "SkullStrip", "Segmentation"}
