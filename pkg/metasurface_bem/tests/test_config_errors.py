"""
Configuration and Error Handling Tests
"""

import json

import pytest
import yaml

from metasurface_bem.core.tracing import SpanStats, TracingManager
from metasurface_bem.utils.config import ConfigManager, ScenarioConfig, scenario_from_dict
from metasurface_bem.utils.error_handling import (
    ConfigError,
    ErrorHandler,
    ErrorSeverity,
    MetasurfaceError,
    NearResonance,
    RayleighAnomaly,
    SlowConvergence,
    exit_code_table,
)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ConfigManager.ENV_MAP:
        monkeypatch.delenv(name, raising=False)


def write_yaml(tmp_path, data, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


class TestConfigManager:
    """Scenario loading, overrides and validation"""

    def test_defaults_are_valid(self):
        manager = ConfigManager(configure_logging=False)
        assert manager.validate_config() == []
        config = manager.require_valid()
        assert config.sweep.count == 36
        assert config.incidence.d == [0.6, 0.0, -0.8]

    def test_yaml_file(self, tmp_path):
        path = write_yaml(tmp_path, {"geometry": {"radius": 0.1, "refinement": 1}, "delta": 0.2})
        config = ConfigManager(path, configure_logging=False).require_valid()
        assert config.geometry.radius == 0.1
        assert config.geometry.refinement == 1
        assert config.delta == 0.2

    def test_json_file(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps({"sweep": {"omega_min": 0.5, "omega_max": 0.6, "count": 3}}))
        config = ConfigManager(str(path), configure_logging=False).require_valid()
        assert config.sweep.count == 3

    def test_environment_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("METASURFACE_THREADS", "4")
        monkeypatch.setenv("METASURFACE_GUARD", "1e-6")
        monkeypatch.setenv("METASURFACE_ENABLE_TRACING", "false")
        config = ConfigManager(configure_logging=False).get_config()
        assert config.threads == 4
        assert config.numerics.guard == 1e-6
        assert config.logging.enable_tracing is False

    def test_invalid_environment_value_ignored(self, monkeypatch):
        monkeypatch.setenv("METASURFACE_SEED", "seven")
        assert ConfigManager(configure_logging=False).get_config().seed == 0

    def test_unknown_keys_dropped(self, caplog):
        config = scenario_from_dict({"geometry": {"radius": 0.1, "colour": "gold"}, "extra": 1})
        assert config.geometry.radius == 0.1
        assert not hasattr(config.geometry, "colour")
        assert "colour" in caplog.text

    def test_layers(self):
        config = scenario_from_dict({"layers": [{"radius": 0.08, "delta": 0.05}]})
        assert config.layers[0].radius == 0.08
        assert config.layers[0].delta == 0.05

    def test_invalid_incidence(self, tmp_path):
        path = write_yaml(tmp_path, {"incidence": {"d": [0.0, 0.0, 1.0], "p": [1.0, 0.0, 0.0]}})
        with pytest.raises(ConfigError) as info:
            ConfigManager(path, configure_logging=False).require_valid()
        assert any("d3 < 0" in issue for issue in info.value.details["issues"])

    def test_degenerate_lattice_reported(self, tmp_path):
        path = write_yaml(tmp_path, {"lattice": {"a1": [1.0, 0.0], "a2": [2.0, 0.0]}})
        issues = ConfigManager(path, configure_logging=False).validate_config()
        assert "lattice vectors are linearly dependent" in issues

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ConfigManager(str(tmp_path / "absent.yaml"), configure_logging=False)

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigError):
            scenario_from_dict({"geometry": [1, 2, 3]})

    def test_update_and_save(self, tmp_path):
        manager = ConfigManager(configure_logging=False)
        manager.update_config(delta=0.3, sweep={"count": 5})
        target = str(tmp_path / "saved.yaml")
        manager.save_config(target)
        reloaded = ConfigManager(target, configure_logging=False).get_config()
        assert reloaded.delta == 0.3
        assert reloaded.sweep.count == 5
        assert isinstance(reloaded, ScenarioConfig)

    def test_save_needs_path(self):
        with pytest.raises(ConfigError):
            ConfigManager(configure_logging=False).save_config()


class TestErrors:
    """Exception records, exit codes and the error handler"""

    def test_to_dict(self):
        error = NearResonance("too close", distance=1e-10, kind="e", lam=complex(-0.2, 0.0))
        record = error.to_dict()
        assert record["error"] == "NearResonance"
        assert record["exit_code"] == 12
        assert record["distance"] == 1e-10
        assert record["lam"] == [-0.2, 0.0]
        json.dumps(record)

    def test_exit_codes_distinct(self):
        table = exit_code_table()
        codes = [row["exit_code"] for row in table]
        assert len(codes) == len(set(codes))
        assert codes == sorted(codes)
        assert {"error": "SlowConvergence", "exit_code": 2} in table
        assert all(0 < code < 64 for code in codes)

    def test_handler_statistics(self):
        handler = ErrorHandler()
        handler.handle_error(SlowConvergence("x3 too small"), {"component": "greens", "operation": "spectral"})
        handler.handle_error(RayleighAnomaly("order propagates"), {"component": "scattering"})
        context = handler.handle_error(ValueError("bad"))
        assert context.severity == ErrorSeverity.HIGH
        assert context.exit_code == 70

        stats = handler.get_error_statistics()
        assert stats["total_errors"] == 3
        assert stats["by_component"]["greens"] == 1
        assert stats["by_severity"]["high"] == 2
        assert stats["by_error_type"]["SlowConvergence"] == 1

    def test_base_class_is_internal(self):
        assert MetasurfaceError("generic").exit_code == 70


class TestTracing:

    def test_spans_recorded(self):
        tracer = TracingManager()
        with tracer.span("outer"):
            with tracer.span("inner", panels=80):
                pass
        with pytest.raises(RuntimeError):
            with tracer.span("inner"):
                raise RuntimeError("boom")
        metrics = tracer.get_performance_report()["metrics"]
        assert metrics["outer"]["count"] == 1
        assert metrics["inner"]["count"] == 2

    def test_disabled(self):
        tracer = TracingManager(enabled=False)
        with tracer.span("anything") as span_id:
            assert span_id is None
        assert tracer.get_performance_report()["metrics"] == {}

    def test_long_sweep_keeps_fixed_size_statistics(self):
        tracer = TracingManager()
        for _ in range(5000):
            with tracer.span("sweep_row"):
                pass
        stats = tracer.stats("sweep_row")
        assert isinstance(stats, SpanStats)
        assert stats.count == 5000
        assert 0.0 <= stats.max_ms <= stats.total_ms
        assert vars(stats).keys() == {"count", "total_ms", "max_ms"}
        assert tracer.stats("never_run") is None
