"""
lbforge Monitoring Module

Error handling, logging and environment configuration for the lbforge
command line.

Main Components:
- ForgeLogger: package logging with operation timing
- ForgeErrorHandler: structured error records and exit-code mapping
- MonitoringConfig: LBFORGE_* environment configuration

Quick Start:
    from monitoring import setup_monitoring_from_env

    config, logger, error_handler = setup_monitoring_from_env()

    try:
        with logger.time_operation("forge.e1"):
            ...
    except Exception as e:
        error_handler.handle_exception(e, "forge")
"""

from .error_handler import (
    EXIT_FAILED,
    EXIT_INPUT_ERROR,
    EXIT_OK,
    ErrorCategory,
    ErrorDetails,
    ErrorSeverity,
    ForgeErrorHandler,
    ForgeLogger,
    classify_exception,
    create_forge_logger,
    run_with_monitoring,
    setup_monitoring,
    setup_monitoring_from_env,
)
from .config import (
    MonitoringConfig,
    create_example_env_file,
    load_monitoring_config,
)

__version__ = "1.0.0"

__all__ = [
    "ForgeLogger",
    "ForgeErrorHandler",
    "MonitoringConfig",
    "ErrorDetails",
    "ErrorSeverity",
    "ErrorCategory",
    "EXIT_OK",
    "EXIT_FAILED",
    "EXIT_INPUT_ERROR",
    "classify_exception",
    "run_with_monitoring",
    "setup_monitoring",
    "setup_monitoring_from_env",
    "create_forge_logger",
    "load_monitoring_config",
    "create_example_env_file",
    "__version__",
]
