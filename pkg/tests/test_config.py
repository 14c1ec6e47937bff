import json

import pytest

from safexplore.config import ConfigError, ScenarioConfig, from_dict, load_scenario


def test_defaults_validate_and_round_trip():
    cfg = ScenarioConfig().validate()
    assert from_dict(cfg.to_dict()) == cfg


def test_dotted_replace():
    cfg = ScenarioConfig().replace(**{"safety.enabled": False, "human.gamma": 70.0, "seed": 3})
    assert cfg.safety.enabled is False and cfg.human.gamma == 70.0 and cfg.seed == 3
    assert ScenarioConfig().safety.enabled is True


@pytest.mark.parametrize("override", [
    {"human.nope": 1}, {"bogus": 1}, {"risk_preference": "reckless"}, {"uncertainty_mode": "partial"},
    {"adaptation.forgetting": 0.0}, {"human.gamma": -1.0}, {"safety.d_min": 0.0}, {"ts": 0.0},
    {"human.kind": "neural"}, {"explore.grid": 1}, {"neural.trajectory_len": 2},
])
def test_invalid_values_rejected(override):
    with pytest.raises(ConfigError):
        ScenarioConfig().replace(**override)


def test_schema_version_required():
    with pytest.raises(ConfigError):
        from_dict({"schema_version": 99})


def test_error_points_at_offending_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "schema_version": 1,\n  "human": {\n    "gamma": -3\n  }\n}\n')
    with pytest.raises(ConfigError) as err:
        load_scenario(path)
    assert err.value.line == 4
    assert str(err.value).startswith(f"{path}:4:")


def test_unknown_key_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema_version": 1, "horizon": 10, "colour": "red"}, indent=2))
    with pytest.raises(ConfigError) as err:
        load_scenario(path)
    assert err.value.line == 4


def test_malformed_json_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "schema_version": 1,\n  "horizon": ,\n}\n')
    with pytest.raises(ConfigError) as err:
        load_scenario(path)
    assert err.value.line == 3
