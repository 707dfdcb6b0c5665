import logging

import pytest

from lbforge.errors import (
    BundleFormatError,
    ConstructionInapplicable,
    GraphFormatError,
    InfeasibleConfiguration,
    VictimDidNotTerminate,
    WireFormatError,
)
from monitoring import (
    EXIT_FAILED,
    EXIT_INPUT_ERROR,
    ErrorCategory,
    ErrorSeverity,
    ForgeErrorHandler,
    ForgeLogger,
    MonitoringConfig,
    classify_exception,
    create_example_env_file,
    load_monitoring_config,
    run_with_monitoring,
    setup_monitoring_from_env,
)


@pytest.mark.parametrize(
    "exception, category, code",
    [
        (GraphFormatError("bad", 3), ErrorCategory.GRAPH_INPUT, EXIT_INPUT_ERROR),
        (InfeasibleConfiguration("n"), ErrorCategory.SCENARIO_CONFIG, EXIT_INPUT_ERROR),
        (ConstructionInapplicable("k"), ErrorCategory.FORGE, EXIT_INPUT_ERROR),
        (BundleFormatError("b"), ErrorCategory.BUNDLE_IO, EXIT_INPUT_ERROR),
        (VictimDidNotTerminate("stalled"), ErrorCategory.FORGE, EXIT_FAILED),
        (WireFormatError("short"), ErrorCategory.CONFIGURATION, EXIT_INPUT_ERROR),
        (FileNotFoundError("x"), ErrorCategory.FILE_OPERATIONS, EXIT_INPUT_ERROR),
        (RuntimeError("?"), ErrorCategory.SIMULATION, EXIT_INPUT_ERROR),
    ],
)
def test_classify_exception(exception, category, code):
    assert classify_exception(exception) == (category, code)


class TestForgeLogger:
    def test_handlers_go_to_the_package_logger(self):
        ForgeLogger("DEBUG", component="test")
        package = logging.getLogger("lbforge")
        assert package.level == logging.DEBUG
        assert len(package.handlers) == 1

    def test_file_logging(self, tmp_path):
        log_file = tmp_path / "lbforge.log"
        logger = ForgeLogger("INFO", str(log_file), "test")
        logger.logger.info("hello")
        for handler in logging.getLogger("lbforge").handlers:
            handler.flush()
        assert "hello" in log_file.read_text()

    def test_operation_stats(self):
        logger = ForgeLogger(component="test")
        for _ in range(3):
            with logger.time_operation("forge.e1"):
                pass
        stats = logger.get_operation_stats()["forge.e1"]
        assert stats["count"] == 3
        assert stats["min_time"] <= stats["average_time"] <= stats["max_time"]

    def test_failed_operations_are_still_timed(self):
        logger = ForgeLogger(component="test")
        with pytest.raises(ValueError):
            with logger.time_operation("simulate"):
                raise ValueError("boom")
        assert logger.get_operation_stats()["simulate"]["count"] == 1


class TestForgeErrorHandler:
    def test_error_ids_are_numbered(self):
        handler = ForgeErrorHandler(ForgeLogger(component="test"))
        first = handler.generate_error_id()
        second = handler.generate_error_id()
        assert first.startswith("LBFORGE_ERROR_") and first.endswith("_0001")
        assert second.endswith("_0002")

    def test_handle_exception_infers_the_category(self):
        handler = ForgeErrorHandler(ForgeLogger(component="test"))
        try:
            raise GraphFormatError("unknown directive", 4)
        except GraphFormatError as e:
            error = handler.handle_exception(e, "check")
        assert error.category is ErrorCategory.GRAPH_INPUT
        assert error.severity is ErrorSeverity.HIGH
        assert error.line_number == 4
        assert error.message == "line 4: unknown directive"
        assert "GraphFormatError" in error.traceback_info
        assert handler.get_error_summary() == {
            "total_errors": 1,
            "by_category": {"graph_input": 1},
        }

    def test_exit_code(self):
        handler = ForgeErrorHandler(ForgeLogger(component="test"))
        assert handler.exit_code_for(VictimDidNotTerminate("x")) == EXIT_FAILED

    def test_to_dict(self):
        handler = ForgeErrorHandler(ForgeLogger(component="test"))
        error = handler.create_error(
            "no bundle", ErrorSeverity.LOW, ErrorCategory.BUNDLE_IO, context={"dir": "x"}
        )
        record = error.to_dict()
        assert record["category"] == "bundle_io"
        assert record["exception_type"] == "UnknownError"
        assert record["context"] == {"dir": "x"}


class TestRunWithMonitoring:
    def test_success(self):
        handler = ForgeErrorHandler(ForgeLogger(component="test"))

        def double(x):
            return 2 * x

        assert run_with_monitoring(double, "unit", handler, x=4) == (8, None)
        assert "unit.double" in handler.logger.get_operation_stats()

    def test_failure_is_captured(self):
        handler = ForgeErrorHandler(ForgeLogger(component="test"))

        def explode():
            raise RuntimeError("nope")

        result, error = run_with_monitoring(explode, "unit", handler)
        assert result is None
        assert error.context["function"] == "explode"
        assert handler.error_history == [error]

    def test_only_listed_exceptions_are_captured(self):
        handler = ForgeErrorHandler(ForgeLogger(component="test"))

        def give_up():
            raise VictimDidNotTerminate("stalled")

        result, error = run_with_monitoring(
            give_up, "unit", handler, severity=ErrorSeverity.LOW, catch=(VictimDidNotTerminate,)
        )
        assert result is None
        assert error.severity is ErrorSeverity.LOW
        assert error.exit_code == EXIT_FAILED
        with pytest.raises(VictimDidNotTerminate):
            run_with_monitoring(give_up, "unit", handler, catch=(ValueError,))


class TestSetupFromEnvironment:
    def test_returns_config_logger_and_handler(self, monkeypatch):
        monkeypatch.setenv("LBFORGE_DEFAULT_MAX_STEPS", "1234")
        config, logger, handler = setup_monitoring_from_env("cli.check")
        assert config.default_max_steps == 1234
        assert logger.logger.name == "lbforge.cli.check"
        assert handler.logger is logger


class TestMonitoringConfig:
    def test_defaults(self):
        config = MonitoringConfig()
        assert config.default_max_steps == 200_000
        assert config.max_link_delay == 8
        assert config.validate_config() == []

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("LBFORGE_DEFAULT_MAX_STEPS", "500")
        monkeypatch.setenv("LBFORGE_MAX_LINK_DELAY", "3")
        monkeypatch.setenv("LBFORGE_LOG_LEVEL", "debug")
        config = MonitoringConfig()
        assert (config.default_max_steps, config.max_link_delay) == (500, 3)
        assert config.log_level == "DEBUG"
        assert config.to_dict()["runs"]["default_max_steps"] == 500

    def test_non_integer_values_fall_back(self, monkeypatch):
        monkeypatch.setenv("LBFORGE_MAX_LINK_DELAY", "fast")
        assert MonitoringConfig().max_link_delay == 8

    def test_validation_repairs_bad_values(self, monkeypatch):
        monkeypatch.setenv("LBFORGE_LOG_LEVEL", "LOUD")
        monkeypatch.setenv("LBFORGE_DEFAULT_MAX_STEPS", "0")
        config = MonitoringConfig()
        issues = config.validate_config()
        assert len(issues) == 2
        assert config.log_level == "INFO"
        assert config.default_max_steps == 200_000

    def test_load_applies_validation(self, monkeypatch):
        monkeypatch.setenv("LBFORGE_SWEEP_WORKERS", "0")
        assert load_monitoring_config().sweep_workers == 1

    def test_example_env_file(self, tmp_path):
        path = create_example_env_file(str(tmp_path / "env" / ".env.example"))
        text = path.read_text()
        for key in ("LBFORGE_LOG_LEVEL", "LBFORGE_DEFAULT_MAX_STEPS", "LBFORGE_SWEEP_WORKERS"):
            assert f"{key}=" in text
