"""Configuration loading: precedence, defaults, validation."""

from __future__ import annotations

from pathlib import Path

import pytest

from paperforge.config import ABLATION_SWITCHES, Budgets, load_config
from paperforge.errors import ConfigError

INI = """\
[run]
paper = /papers/x.pdf
workspace = /ws/x
entry_command = python3 main.py

[gateway]
backend = mock:/tmp/p.json
retries = 5

[model.fast]
endpoint = https://fast.example/v1/chat/completions
api_key_env = FAST_KEY
supports_vision = true
temperature = 0

[model.careful]
endpoint = https://careful.example/v1/chat/completions
api_key_env = CAREFUL_KEY
max_output_tokens = 9000

[stages]
parsing = fast
implement = careful

[ablation]
multimodal = off

[budgets]
max_debug_iterations = 4
plan_cap = 12

[hpo]
enabled = on
budget = 3
"""


def write_ini(tmp_path: Path, text: str = INI) -> Path:
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


def test_file_values_loaded(tmp_path):
    config = load_config(write_ini(tmp_path))
    assert config.paper == Path("/papers/x.pdf")
    assert config.entry_command == "python3 main.py"
    assert config.retries == 5
    assert config.budgets.max_debug_iterations == 4
    assert config.hpo_enabled and config.hpo_budget == 3


def test_stage_bindings_resolve_profiles(tmp_path):
    config = load_config(write_ini(tmp_path))
    assert config.binding("parsing").profile.api_key_ref == "FAST_KEY"
    assert config.binding("implement").profile.max_output_tokens == 9000
    # unbound stages fall back to the built-in default profile
    assert config.binding("judge").profile.name == "default"


def test_binding_to_unknown_profile_is_config_error(tmp_path):
    config = load_config(write_ini(tmp_path), {"stages.debug": "ghost"})
    with pytest.raises(ConfigError):
        config.binding("debug")


def test_flag_overrides_beat_file_values(tmp_path):
    config = load_config(write_ini(tmp_path), {"run.entry_command": "python3 other.py",
                                               "gateway.retries": "2"})
    assert config.entry_command == "python3 other.py"
    assert config.retries == 2


def test_ablation_defaults_all_on(tmp_path):
    config = load_config(None, {})
    assert config.ablation == {name: True for name in ABLATION_SWITCHES}
    with_file = load_config(write_ini(tmp_path))
    assert not with_file.ablation["multimodal"]
    assert with_file.ablation["feedback"]


def test_unknown_ablation_switch_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, {"ablation.telepathy": "off"})


def test_unknown_stage_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, {"stages.dreaming": "default"})


def test_nonpositive_budgets_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, {"budgets.max_debug_iterations": "0"})
    with pytest.raises(ConfigError):
        load_config(None, {"budgets.execution_timeout": "-5"})
    with pytest.raises(ConfigError):
        Budgets(max_repairs=-1).validate()


def test_missing_config_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "ghost.ini")


def test_default_temperature_is_zero(tmp_path):
    config = load_config(write_ini(tmp_path))
    assert config.binding("parsing").profile.temperature == 0.0
    assert config.binding("blueprint").profile.temperature == 0.0


def test_snapshot_round_trips_key_fields(tmp_path):
    config = load_config(write_ini(tmp_path), {"env.EPOCHS": "1"})
    snap = config.snapshot()
    assert snap["ablation"]["multimodal"] is False
    assert snap["budgets"]["plan_cap"] == 12
    assert snap["env"] == {"EPOCHS": "1"}
    assert snap["profiles"]["fast"]["supports_vision"] is True


def test_bad_boolean_is_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, {"ablation.feedback": "maybe"})
