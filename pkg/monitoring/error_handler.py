"""
Error Handling, Logging, and Timing for the Local-Broadcast Consensus Forge

Structured error records, a component logger with operation timing, and the
mapping from domain exceptions onto command exit codes.
"""

import logging
import sys
import time
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from logging.handlers import RotatingFileHandler
from typing import Any, Callable, Dict, List, Optional, Tuple, Type

from lbforge.errors import (
    BundleFormatError,
    ConstructionInapplicable,
    GraphFormatError,
    InfeasibleConfiguration,
    InvalidGraphError,
    InvalidPartitionError,
    LbforgeError,
    MissingBehaviorError,
    ScenarioError,
    UnknownNodeError,
    VictimDidNotTerminate,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT_ERROR = 2


class ErrorSeverity(Enum):
    """Error severity levels."""

    CRITICAL = "critical"  # command cannot continue
    HIGH = "high"  # a run failed
    MEDIUM = "medium"  # recoverable, output degraded
    LOW = "low"
    INFO = "info"


class ErrorCategory(Enum):
    """Where an error originated."""

    GRAPH_INPUT = "graph_input"
    SCENARIO_CONFIG = "scenario_config"
    SIMULATION = "simulation"
    GADGET_CONSTRUCTION = "gadget_construction"
    FORGE = "forge"
    BUNDLE_IO = "bundle_io"
    FILE_OPERATIONS = "file_operations"
    CONFIGURATION = "configuration"


# First match wins; subclasses before their bases.
_EXCEPTION_TABLE: List[Tuple[type, ErrorCategory, int]] = [
    (GraphFormatError, ErrorCategory.GRAPH_INPUT, EXIT_INPUT_ERROR),
    (InvalidGraphError, ErrorCategory.GRAPH_INPUT, EXIT_INPUT_ERROR),
    (ScenarioError, ErrorCategory.SCENARIO_CONFIG, EXIT_INPUT_ERROR),
    (InfeasibleConfiguration, ErrorCategory.SCENARIO_CONFIG, EXIT_INPUT_ERROR),
    (ConstructionInapplicable, ErrorCategory.FORGE, EXIT_INPUT_ERROR),
    (InvalidPartitionError, ErrorCategory.GADGET_CONSTRUCTION, EXIT_INPUT_ERROR),
    (MissingBehaviorError, ErrorCategory.SIMULATION, EXIT_INPUT_ERROR),
    (UnknownNodeError, ErrorCategory.SIMULATION, EXIT_INPUT_ERROR),
    (BundleFormatError, ErrorCategory.BUNDLE_IO, EXIT_INPUT_ERROR),
    (VictimDidNotTerminate, ErrorCategory.FORGE, EXIT_FAILED),
    (LbforgeError, ErrorCategory.CONFIGURATION, EXIT_INPUT_ERROR),
    (OSError, ErrorCategory.FILE_OPERATIONS, EXIT_INPUT_ERROR),
]


def classify_exception(exception: BaseException) -> Tuple[ErrorCategory, int]:
    for exc_type, category, code in _EXCEPTION_TABLE:
        if isinstance(exception, exc_type):
            return category, code
    return ErrorCategory.SIMULATION, EXIT_INPUT_ERROR


@dataclass
class ErrorDetails:
    """Structured record of one handled error."""

    error_id: str
    timestamp: datetime
    severity: ErrorSeverity
    category: ErrorCategory
    message: str
    exception_type: str
    traceback_info: str
    context: Dict[str, Any] = field(default_factory=dict)
    component: str = "unknown"
    file_path: Optional[str] = None
    line_number: Optional[int] = None
    recovery_action: Optional[str] = None
    exit_code: int = EXIT_INPUT_ERROR

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_id": self.error_id,
            "timestamp": self.timestamp.isoformat(),
            "severity": self.severity.value,
            "category": self.category.value,
            "message": self.message,
            "exception_type": self.exception_type,
            "traceback": self.traceback_info,
            "context": self.context,
            "component": self.component,
            "file_path": self.file_path,
            "line_number": self.line_number,
            "recovery_action": self.recovery_action,
            "exit_code": self.exit_code,
        }


class ForgeLogger:
    """Component logger with operation timing."""

    def __init__(
        self,
        log_level: str = "INFO",
        log_file: Optional[str] = None,
        component: str = "cli",
    ):
        """
        Initialize the logger.

        Handlers are attached to the `lbforge` package logger so that the
        domain modules' `logging.getLogger(__name__)` loggers share them.
        Console output goes to stderr; stdout carries command output.

        Args:
            log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
            log_file: Optional log file path
            component: Component name for the logger
        """
        self.component = component
        level = getattr(logging, log_level.upper())
        package = logging.getLogger("lbforge")
        package.setLevel(level)
        package.handlers.clear()

        formatter = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        package.addHandler(console_handler)

        if log_file:
            file_handler = RotatingFileHandler(
                log_file,
                maxBytes=10 * 1024 * 1024,
                backupCount=5,  # 10MB max, 5 backups
            )
            file_handler.setFormatter(formatter)
            package.addHandler(file_handler)

        self.logger = logging.getLogger(f"lbforge.{component}")
        self.operation_times: Dict[str, List[float]] = {}

    def log_error(self, error: ErrorDetails) -> None:
        """Log an error with structured information."""
        extra_data = {k: v for k, v in error.to_dict().items() if k != "message"}
        self.logger.error(f"Error {error.error_id}: {error.message}", extra=extra_data)

    def time_operation(self, operation_name: str):
        """Context manager for timing operations."""
        return self._OperationTimer(self, operation_name)

    class _OperationTimer:
        def __init__(self, logger: "ForgeLogger", operation_name: str):
            self.logger = logger
            self.operation_name = operation_name
            self.start_time = None

        def __enter__(self):
            self.start_time = time.perf_counter()
            return self

        def __exit__(self, exc_type, exc_val, exc_tb):
            if self.start_time is None:
                return
            execution_time = time.perf_counter() - self.start_time
            self.logger.operation_times.setdefault(self.operation_name, []).append(
                execution_time
            )
            self.logger.logger.debug(
                f"Operation '{self.operation_name}' completed in {execution_time:.3f}s"
            )

    def get_operation_stats(self) -> Dict[str, Dict[str, float]]:
        """Get statistics for all timed operations."""
        stats = {}
        for operation, times in self.operation_times.items():
            if times:
                stats[operation] = {
                    "count": len(times),
                    "total_time": sum(times),
                    "average_time": sum(times) / len(times),
                    "min_time": min(times),
                    "max_time": max(times),
                }
        return stats


class ForgeErrorHandler:
    """Turns exceptions into logged ErrorDetails and exit codes."""

    def __init__(self, logger: Optional[ForgeLogger] = None):
        self.logger = logger or ForgeLogger()
        self.error_counter = 0
        self.error_history: List[ErrorDetails] = []

    def generate_error_id(self) -> str:
        self.error_counter += 1
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        return f"LBFORGE_ERROR_{timestamp}_{self.error_counter:04d}"

    def create_error(
        self,
        message: str,
        severity: ErrorSeverity,
        category: ErrorCategory,
        exception: Optional[BaseException] = None,
        component: str = "unknown",
        context: Optional[Dict[str, Any]] = None,
        recovery_action: Optional[str] = None,
    ) -> ErrorDetails:
        """
        Create, record and log structured error details.

        Args:
            message: Error message
            severity: Error severity level
            category: Error category
            exception: Optional exception object
            component: Component where the error occurred
            context: Additional context information
            recovery_action: Suggested recovery action

        Returns:
            ErrorDetails object
        """
        exception_type = type(exception).__name__ if exception else "UnknownError"
        traceback_info = ""
        file_path = None
        line_number = getattr(exception, "line_number", None)
        if exception is not None:
            traceback_info = "".join(
                traceback.format_exception(
                    type(exception), exception, exception.__traceback__
                )
            )
            tb = traceback.extract_tb(exception.__traceback__)
            if tb:
                file_path = tb[-1].filename
                line_number = line_number or tb[-1].lineno

        error = ErrorDetails(
            error_id=self.generate_error_id(),
            timestamp=datetime.now(),
            severity=severity,
            category=category,
            message=message,
            exception_type=exception_type,
            traceback_info=traceback_info,
            context=context or {},
            component=component,
            file_path=file_path,
            line_number=line_number,
            recovery_action=recovery_action,
            exit_code=self.exit_code_for(exception) if exception else EXIT_INPUT_ERROR,
        )
        self.error_history.append(error)
        self.logger.log_error(error)
        return error

    def handle_exception(
        self,
        exception: BaseException,
        component: str,
        severity: ErrorSeverity = ErrorSeverity.HIGH,
        category: Optional[ErrorCategory] = None,
        context: Optional[Dict[str, Any]] = None,
        recovery_action: Optional[str] = None,
    ) -> ErrorDetails:
        """Record an exception; the category is inferred when not given."""
        if category is None:
            category, _ = classify_exception(exception)
        return self.create_error(
            message=str(exception),
            severity=severity,
            category=category,
            exception=exception,
            component=component,
            context=context,
            recovery_action=recovery_action,
        )

    def exit_code_for(self, exception: BaseException) -> int:
        return classify_exception(exception)[1]

    def get_error_summary(self) -> Dict[str, Any]:
        by_category: Dict[str, int] = {}
        for error in self.error_history:
            by_category[error.category.value] = by_category.get(error.category.value, 0) + 1
        return {"total_errors": len(self.error_history), "by_category": by_category}


def create_forge_logger(
    log_level: str = "INFO",
    log_file: Optional[str] = None,
    component: str = "cli",
) -> ForgeLogger:
    return ForgeLogger(log_level, log_file, component)


def run_with_monitoring(
    func: Callable,
    component: str,
    error_handler: Optional[ForgeErrorHandler] = None,
    severity: ErrorSeverity = ErrorSeverity.HIGH,
    catch: Tuple[Type[BaseException], ...] = (Exception,),
    **kwargs,
) -> Tuple[Any, Optional[ErrorDetails]]:
    """
    Run a function inside a timed operation and capture any failure.

    Only exceptions listed in `catch` are recorded; anything else propagates.

    Returns:
        Tuple of (result, error_details)
    """
    handler = error_handler or ForgeErrorHandler()
    try:
        with handler.logger.time_operation(f"{component}.{func.__name__}"):
            return func(**kwargs), None
    except catch as e:
        error = handler.handle_exception(
            e,
            component,
            severity=severity,
            context={"function": func.__name__, "kwargs": sorted(kwargs)},
        )
        return None, error


def setup_monitoring(config, component: str = "cli") -> Tuple[ForgeLogger, ForgeErrorHandler]:
    """Build the logger and error handler described by a MonitoringConfig."""
    log_file = config.log_file if config.enable_file_logging else None
    logger = create_forge_logger(config.log_level, log_file, component)
    return logger, ForgeErrorHandler(logger)


def setup_monitoring_from_env(
    component: str = "cli",
) -> Tuple[Any, ForgeLogger, ForgeErrorHandler]:
    """
    Set up logging and error handling from LBFORGE_* environment variables.

    Returns:
        Tuple of (MonitoringConfig, ForgeLogger, ForgeErrorHandler)
    """
    from .config import load_monitoring_config

    config = load_monitoring_config()
    return (config, *setup_monitoring(config, component))
