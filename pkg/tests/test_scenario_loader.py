import json

import pytest

from models.data_models import Policy
from models.scenario_config import DEMAND_LEVELS, ScenarioConfig, grid_presets
from services import scenario_loader
from services.scenario_loader import (
    ConfigError,
    applied_defaults,
    load_config,
    locate_key,
    parse_config,
    serialize_config,
)

DOCUMENT = """{
  "simulation": {
    "policy": "all-way-stop",
    "horizon": 120,
    "seed": 7
  },
  "demand": {
    "level": "medium",
    "distribution": "unbalanced"
  },
  "fairness": {
    "alpha1": 0.2,
    "alpha2": 0.5,
    "alpha3": 0.3
  }
}
"""


@pytest.fixture
def loader_log(caplog):
    """Loader records; fairlane loggers do not propagate to the root logger"""
    loader_logger = scenario_loader.logger
    loader_logger.addHandler(caplog.handler)
    caplog.handler.setLevel("INFO")
    try:
        yield caplog
    finally:
        loader_logger.removeHandler(caplog.handler)


class TestParseConfig:
    def test_empty_document_is_default(self):
        default = ScenarioConfig().model_dump()
        assert parse_config("").model_dump() == default
        assert parse_config("  \n").model_dump() == default
        assert parse_config("{}").model_dump() == default

    def test_document_values(self):
        cfg = parse_config(DOCUMENT)
        assert cfg.simulation.policy is Policy.ALL_WAY_STOP
        assert cfg.simulation.horizon == 120.0
        assert cfg.simulation.seed == 7
        assert cfg.demand.level == DEMAND_LEVELS["medium"]
        assert cfg.fairness.alpha2 == 0.5
        assert cfg.simulation.Ts == 0.02
        assert cfg.label == "all-way-stop_2010_unbalanced"

    def test_payoff_weights_off_simplex(self):
        text = DOCUMENT.replace('"alpha1": 0.2', '"alpha1": 0.5').replace('"alpha3": 0.3', '"alpha3": 0.5')
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert err.value.key == "fairness"
        assert err.value.line == 11
        assert "alpha1 + alpha2 + alpha3" in str(err.value)

    def test_unknown_key(self):
        text = '{\n  "simulation": {\n    "horizon": 10,\n    "bogus": 1\n  }\n}'
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert err.value.key == "simulation.bogus"
        assert err.value.line == 4
        assert "simulation.bogus" in str(err.value)

    def test_wrong_type(self):
        with pytest.raises(ConfigError) as err:
            parse_config('{"simulation": {"seed": "seven"}}')
        assert err.value.key == "simulation.seed"
        assert err.value.line == 1

    def test_out_of_range(self):
        with pytest.raises(ConfigError) as err:
            parse_config('{"simulation": {"Ts": 0}}')
        assert err.value.key == "simulation.Ts"

    def test_unknown_level_preset(self):
        with pytest.raises(ConfigError) as err:
            parse_config('{"demand": {"level": "rush"}}')
        assert err.value.key == "demand.level"

    def test_signal_cycle_must_add_up(self):
        with pytest.raises(ConfigError) as err:
            parse_config('{"signal": {"green": 10}}')
        assert err.value.key == "signal"

    def test_malformed_json_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config('{\n  "simulation": {\n    "horizon": 10,\n  }\n}')
        assert err.value.key is None
        assert err.value.line == 4

    def test_non_object_document(self):
        with pytest.raises(ConfigError):
            parse_config("[1, 2, 3]")

    def test_defaults_are_echoed(self, loader_log):
        parse_config('{"simulation": {"seed": 3}}')
        echoed = [r.getMessage() for r in loader_log.records if "Default applied" in r.getMessage()]
        assert any("simulation.horizon = 300.0" in m for m in echoed)
        assert not any("simulation.seed" in m for m in echoed)

    def test_echo_can_be_silenced(self, loader_log):
        parse_config("{}", echo_defaults=False)
        assert not any("Default applied" in r.getMessage() for r in loader_log.records)


class TestAppliedDefaults:
    def test_everything_defaulted(self):
        names = applied_defaults(ScenarioConfig())
        assert "simulation.horizon" in names
        assert "demand.movement_split.left" in names
        assert "fairness" not in names

    def test_given_fields_are_not_listed(self):
        names = applied_defaults(parse_config(DOCUMENT, echo_defaults=False))
        assert "simulation.seed" not in names
        assert "fairness.alpha1" not in names
        assert "fairness.beta1" in names


class TestSerialize:
    def test_round_trip(self):
        cfg = parse_config(DOCUMENT, echo_defaults=False)
        again = parse_config(serialize_config(cfg), echo_defaults=False)
        assert again.model_dump() == cfg.model_dump()

    def test_serialized_document_is_complete(self):
        cfg = parse_config(serialize_config(ScenarioConfig()), echo_defaults=False)
        assert applied_defaults(cfg) == []

    def test_presets_round_trip(self):
        for cfg in grid_presets(list(Policy), horizon=0.0):
            assert parse_config(serialize_config(cfg), echo_defaults=False).model_dump() == cfg.model_dump()

    def test_document_is_plain_json(self):
        payload = json.loads(serialize_config(ScenarioConfig()))
        assert payload["simulation"]["policy"] == "proposed"
        assert payload["demand"]["ratios"] is None


class TestLoadConfig:
    def test_reads_file(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(DOCUMENT, encoding="utf-8")
        assert load_config(path).simulation.seed == 7

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")


def test_locate_key_nested():
    assert locate_key(DOCUMENT, ("simulation", "seed")) == 5
    assert locate_key(DOCUMENT, ("demand", "movement_split", "left")) == 7
    assert locate_key(DOCUMENT, ()) is None


def test_overrides_keep_defaults_unset():
    cfg = parse_config('{"demand": {"level": "high"}}', echo_defaults=False)
    changed = cfg.with_overrides(simulation={"seed": 4})
    names = applied_defaults(changed)
    assert "simulation.seed" not in names
    assert "demand.level" not in names
    assert "simulation.Ts" in names
    assert changed.demand.level == 3600.0
