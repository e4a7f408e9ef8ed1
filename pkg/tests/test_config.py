from __future__ import annotations

import pytest

from mecd.config import ConfigError, engine_config_to_dict, load_engine_config


def test_defaults_without_file():
    config = load_engine_config(None)
    assert config.router.num_experts == 5
    assert config.router.similarity_threshold == 0.9
    assert config.router.max_classes_per_expert == 6
    assert config.memory.per_class_budget == 400
    assert config.memory.per_expert_budget == 2400
    assert config.memory.replay_ratio == 0.2
    assert config.memory.retention_mode == "replay_shrink"
    assert config.seed == 0
    assert config.class_order is None
    assert config.nn_method == "exact"


def test_file_values_and_partial_sections(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text(
        "[router]\nnum_experts = 2\nsimilarity_threshold = 0.75\n"
        "[run]\nseed = 41\nclass_order = b, a\nnn_method = gram\n"
    )
    config = load_engine_config(path)
    assert config.router.num_experts == 2
    assert config.router.similarity_threshold == 0.75
    assert config.memory.per_class_budget == 400  # untouched section keeps defaults
    assert config.seed == 41
    assert config.class_order == ("b", "a")
    assert config.nn_method == "gram"


def test_missing_file_raises(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_engine_config(tmp_path / "absent.ini")


def test_unparseable_value_raises(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[router]\nnum_experts = many\n")
    with pytest.raises(ConfigError, match="num_experts"):
        load_engine_config(path)


def test_invalid_domain_value_raises(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[memory]\nreplay_ratio = 0\n")
    with pytest.raises(ConfigError, match="replay_ratio"):
        load_engine_config(path)


def test_config_echo_round_trips_through_dict():
    config = load_engine_config(None)
    echo = engine_config_to_dict(config)
    assert echo["router"]["num_experts"] == 5
    assert echo["memory"]["retention_mode"] == "replay_shrink"
    assert echo["run"]["class_order"] is None
