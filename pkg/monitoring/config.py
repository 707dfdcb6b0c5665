"""
Configuration module for lbforge monitoring and run defaults

Reads LBFORGE_* environment variables (after merging a local `.env`) into a
single MonitoringConfig with sensible defaults.
"""

import logging
import os
from pathlib import Path
from typing import List

from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger("lbforge.monitoring")

VALID_LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {name}={raw!r}, using {default}")
        return default


class MonitoringConfig:
    """Configuration for logging and run defaults."""

    def __init__(self):
        """Initialize configuration from environment variables."""
        # Logging configuration
        self.log_level = os.getenv("LBFORGE_LOG_LEVEL", "INFO").upper()
        self.log_file = os.getenv("LBFORGE_LOG_FILE")
        self.enable_file_logging = (
            os.getenv("LBFORGE_FILE_LOGGING", "false").lower() == "true"
        )
        if self.enable_file_logging and not self.log_file:
            self.log_file = str(Path("monitoring/logs") / "lbforge.log")

        # Run defaults
        self.default_max_steps = _env_int("LBFORGE_DEFAULT_MAX_STEPS", 200_000)
        self.max_link_delay = _env_int("LBFORGE_MAX_LINK_DELAY", 8)
        self.sweep_workers = _env_int("LBFORGE_SWEEP_WORKERS", 4)

    def validate_config(self) -> List[str]:
        """Validate configuration and return list of issues."""
        issues = []

        if self.log_level not in VALID_LOG_LEVELS:
            issues.append(
                f"Invalid log level: {self.log_level}. Must be one of {VALID_LOG_LEVELS}"
            )
            self.log_level = "INFO"

        if self.enable_file_logging and self.log_file:
            log_path = Path(self.log_file)
            try:
                log_path.parent.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                issues.append(f"Cannot create log directory {log_path.parent}: {e}")
                self.enable_file_logging = False

        if self.default_max_steps < 1:
            issues.append("LBFORGE_DEFAULT_MAX_STEPS must be at least 1")
            self.default_max_steps = 200_000
        if self.max_link_delay < 1:
            issues.append("LBFORGE_MAX_LINK_DELAY must be at least 1")
            self.max_link_delay = 8
        if self.sweep_workers < 1:
            issues.append("LBFORGE_SWEEP_WORKERS must be at least 1")
            self.sweep_workers = 1

        return issues

    def to_dict(self) -> dict:
        """Convert configuration to dictionary for logging/debugging."""
        return {
            "logging": {
                "log_level": self.log_level,
                "log_file": self.log_file,
                "file_logging": self.enable_file_logging,
            },
            "runs": {
                "default_max_steps": self.default_max_steps,
                "max_link_delay": self.max_link_delay,
                "sweep_workers": self.sweep_workers,
            },
        }


def load_monitoring_config() -> MonitoringConfig:
    """Load and validate monitoring configuration."""
    config = MonitoringConfig()
    for issue in config.validate_config():
        logger.warning(f"Configuration warning: {issue}")
    return config


def create_example_env_file(filename: str = ".env.example") -> Path:
    """Write an example environment file with every LBFORGE_* option."""
    example_content = """# lbforge configuration

# === LOGGING ===
# Log level: DEBUG, INFO, WARNING, ERROR, CRITICAL
LBFORGE_LOG_LEVEL=INFO

# Rotating log file (defaults to monitoring/logs/lbforge.log when enabled)
LBFORGE_FILE_LOGGING=false
LBFORGE_LOG_FILE=monitoring/logs/lbforge.log

# === RUN DEFAULTS ===
# Event budget per simulated execution (--max-steps overrides)
LBFORGE_DEFAULT_MAX_STEPS=200000

# Upper bound of a single link delay, in logical time units
LBFORGE_MAX_LINK_DELAY=8

# Process pool size for --seeds sweeps
LBFORGE_SWEEP_WORKERS=4
"""
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(example_content, encoding="utf-8")
    return path
