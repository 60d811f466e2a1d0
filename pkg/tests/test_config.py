"""Tests for scenario loading, overrides, and collect-then-raise validation."""

from __future__ import annotations

import pytest


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("LOG_LEVEL", raising=False)
    monkeypatch.delenv("BAD_APPLE_REPORT_DIR", raising=False)


# --- Loading ---

def test_bundled_scenario_matches_defaults():
    from src.shell.config import ScenarioConfig, load_config, to_dict
    assert to_dict(load_config()) == to_dict(ScenarioConfig())


def test_scenario_table_is_top_level(tmp_path):
    from src.shell.config import load_config
    path = tmp_path / "s.toml"
    path.write_text('[scenario]\nname = "mine"\nseeds = [4, 5]\n\n[tor]\npolicy = "PortGroupIsolation"\n')
    config = load_config(path)
    assert config.name == "mine"
    assert config.seeds == [4, 5]
    assert config.tor.policy == "PortGroupIsolation"
    assert config.bittorrent.n_peers == 240


def test_missing_file_rejected(tmp_path):
    from src.shell.config import ConfigInvalid, load_config
    with pytest.raises(ConfigInvalid, match="not found"):
        load_config(tmp_path / "absent.toml")


def test_bad_toml_rejected(tmp_path):
    from src.shell.config import ConfigInvalid, load_config
    path = tmp_path / "broken.toml"
    path.write_text("[scenario\nname = ")
    with pytest.raises(ConfigInvalid):
        load_config(path)


def test_environment_overrides(monkeypatch, tmp_path):
    from src.shell.config import load_config
    monkeypatch.setenv("BAD_APPLE_REPORT_DIR", str(tmp_path))
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    config = load_config()
    assert config.report_dir == str(tmp_path)
    assert config.log_level == "DEBUG"


# --- Overrides ---

@pytest.mark.parametrize("pair,expected", [
    ("tor.n_hops=4", ("tor.n_hops", 4)),
    ("bittorrent.tor_user_fraction=0.25", ("bittorrent.tor_user_fraction", 0.25)),
    ("seeds=[1, 2, 3]", ("seeds", [1, 2, 3])),
    ("tor.policy=OneStreamPerCircuit", ("tor.policy", "OneStreamPerCircuit")),
    ("emit_logs = true", ("emit_logs", True)),
])
def test_parse_override(pair, expected):
    from src.shell.config import parse_override
    assert parse_override(pair) == expected


def test_parse_override_needs_equals():
    from src.shell.config import ConfigInvalid, parse_override
    with pytest.raises(ConfigInvalid):
        parse_override("tor.n_hops")


def test_overrides_applied_after_file():
    from src.shell.config import load_config
    config = load_config(overrides=["tor.policy=PerApplicationIsolation", "scenario.name=x",
                                    "catalog.n_items=50"])
    assert config.policy.value == "PerApplicationIsolation"
    assert config.name == "x"
    assert config.catalog.n_items == 50


def test_with_changes_revalidates():
    from src.shell.config import ConfigInvalid, ScenarioConfig
    base = ScenarioConfig()
    changed = base.with_changes(**{"tor.n_hops": 5, "web.n_sites": 3})
    assert changed.tor.n_hops == 5 and changed.web.n_sites == 3
    assert base.tor.n_hops == 3
    with pytest.raises(ConfigInvalid):
        base.with_changes(**{"tor.n_hops": 1})


# --- Validation ---

def test_unknown_key_rejected():
    from src.shell.config import ConfigInvalid, load_config
    with pytest.raises(ConfigInvalid, match="tor.hops: unknown key"):
        load_config(overrides=["tor.hops=3"])


def test_all_errors_collected():
    from src.shell.config import ConfigInvalid, load_config
    with pytest.raises(ConfigInvalid) as exc:
        load_config(overrides=[
            "bittorrent.tor_user_fraction=1.5",
            "tor.policy=Everything",
            "adversary.malicious_port=0",
        ])
    message = str(exc.value)
    assert message.startswith("Config validation failed:")
    assert "bittorrent.tor_user_fraction" in message
    assert "tor.policy" in message
    assert "adversary.malicious_port" in message


def test_type_errors_reported():
    from src.shell.config import ConfigInvalid, build_config
    with pytest.raises(ConfigInvalid, match="expected integer"):
        build_config({"tor": {"n_hops": "three"}})
    with pytest.raises(ConfigInvalid, match="expected boolean"):
        build_config({"emit_logs": "yes"})


def test_weights_must_sum_to_one():
    from src.shell.config import ConfigInvalid, ScenarioConfig
    with pytest.raises(ConfigInvalid, match="behavior_mix"):
        ScenarioConfig().with_changes(**{"bittorrent.behavior_mix": {"AllViaTor": 0.5, "TrackerOnlyViaTor": 0.4}})
    with pytest.raises(ConfigInvalid, match="population.baseline"):
        ScenarioConfig().with_changes(**{"population.baseline": [{"country": "JP", "asn": 4713, "weight": 0.5}]})


def test_no_tor_behavior_not_a_mix_key():
    from src.shell.config import ConfigInvalid, ScenarioConfig
    with pytest.raises(ConfigInvalid, match="behavior_mix keys"):
        ScenarioConfig().with_changes(**{"bittorrent.behavior_mix": {"NoTor": 1.0}})


def test_instrumented_exits_must_exist():
    from src.shell.config import ConfigInvalid, ScenarioConfig
    with pytest.raises(ConfigInvalid, match="instrumented_exits"):
        ScenarioConfig().with_changes(**{"tor.n_relays": {"entry": 2, "middle": 2, "exit": 2}})


def test_port_in_two_groups_rejected():
    from src.shell.config import ConfigInvalid, ScenarioConfig
    with pytest.raises(ConfigInvalid, match="port 443"):
        ScenarioConfig().with_changes(**{"tor.port_groups": {"web": [80, 443], "tls": [443]}})
