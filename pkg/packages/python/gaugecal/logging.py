"""Structured logging for Gaugecal.

Log records carry key-value fields next to the message. The JSON format
writes one object per line for machine consumption; the text format is
meant for terminals. Both attach the ID of the active calibration run.

Fields may hold numpy scalars and dates; they are converted to plain
JSON values before output.
"""

from __future__ import annotations

import contextvars
import inspect
import json
import logging
import sys
import traceback
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict

_run_id: contextvars.ContextVar[str | None] = contextvars.ContextVar("run_id", default=None)


def get_run_id() -> str | None:
    """ID of the calibration run in progress, or None outside a run."""
    return _run_id.get()


def set_run_id(run_id: str | None) -> None:
    """Set (or clear with None) the run ID attached to log records.

    Worker processes do not inherit it; each task sets it again.
    """
    _run_id.set(run_id)


class LogConfig(BaseModel):
    """Configuration for logging."""

    model_config = ConfigDict(strict=True)

    level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"

    format: Literal["json", "text"] = "text"
    """'text' for terminals, 'json' for log collectors."""

    include_timestamp: bool = True
    include_run_id: bool = True

    include_caller: bool = False
    """Include the calling file, line and function."""


@dataclass
class LogContext:
    """Fields bound to a logger and repeated on each of its records."""

    extra: dict[str, Any] = field(default_factory=dict)

    def with_fields(self, **fields: Any) -> LogContext:
        """New context with the given fields added (later values win)."""
        return LogContext(extra={**self.extra, **fields})


# ============================================================================
# Field Conversion
# ============================================================================


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays and dates to JSON-friendly values."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (date, datetime)):
        return value.isoformat()
    return value


def _text(value: Any) -> str:
    value = _plain(value)
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# ============================================================================
# Formatters
# ============================================================================


class StructuredFormatter(logging.Formatter):
    """JSON-formatted log output, one object per record."""

    def __init__(self, config: LogConfig | None = None) -> None:
        super().__init__()
        self._config = config or LogConfig()

    def format(self, record: logging.LogRecord) -> str:
        log_data: dict[str, Any] = {
            "level": record.levelname,
            "message": record.getMessage(),
            "logger": record.name,
        }
        if self._config.include_timestamp:
            log_data["timestamp"] = datetime.now(timezone.utc).isoformat()
        if self._config.include_run_id and (run_id := get_run_id()):
            log_data["run_id"] = run_id
        if self._config.include_caller:
            log_data["caller"] = {
                "file": record.filename,
                "line": record.lineno,
                "function": record.funcName,
            }
        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        extra = getattr(record, "extra_fields", None) or {}
        log_data.update({k: _plain(v) for k, v in extra.items()})
        return json.dumps(log_data, default=str)


class TextFormatter(logging.Formatter):
    """Human-readable text log output.

    Example line::

        2024-03-01 12:00:00 [WARNING] [1f0c2a9e] gaugecal.fit - Fit did not converge
        | model=emos lead_time_h=24 target_date=2010-05-01 iterations=10000
    """

    def __init__(self, config: LogConfig | None = None) -> None:
        super().__init__()
        self._config = config or LogConfig()

    def format(self, record: logging.LogRecord) -> str:
        parts: list[str] = []
        if self._config.include_timestamp:
            parts.append(datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S"))
        parts.append(f"[{record.levelname}]")
        if self._config.include_run_id and (run_id := get_run_id()):
            parts.append(f"[{run_id[:8]}]")
        parts.append(record.name)
        if self._config.include_caller:
            parts.append(f"({record.filename}:{record.lineno})")
        parts.extend(("-", record.getMessage()))

        extra = getattr(record, "extra_fields", None)
        if extra:
            parts.append("| " + " ".join(f"{k}={_text(v)}" for k, v in extra.items()))

        result = " ".join(parts)
        if record.exc_info:
            result += "\n" + self.formatException(record.exc_info)
        return result


# ============================================================================
# Logger
# ============================================================================


class Logger:
    """Standard library logger with bound key-value fields.

    Example:
        >>> log = get_logger(__name__).with_context(lead_time_h=24)
        >>> log.info("Window planned", n_cases=98)
    """

    def __init__(self, name: str, context: LogContext | None = None) -> None:
        self._logger = logging.getLogger(name)
        self._context = context or LogContext()

    @property
    def name(self) -> str:
        return self._logger.name

    def with_context(self, **fields: Any) -> Logger:
        """New logger whose records also carry ``fields``."""
        return Logger(self._logger.name, self._context.with_fields(**fields))

    def _log(self, level: int, msg: str, **fields: Any) -> None:
        if not self._logger.isEnabledFor(level):
            return
        extra_fields = {**self._context.extra, **fields}
        # Two frames up: past _log and the level method.
        frame = inspect.currentframe()
        for _ in range(2):
            frame = frame.f_back if frame is not None else None
        filename, lineno, func = (
            (frame.f_code.co_filename, frame.f_lineno, frame.f_code.co_name)
            if frame is not None
            else ("(unknown file)", 0, "(unknown function)")
        )
        record = self._logger.makeRecord(
            self._logger.name, level, filename, lineno, msg, (), None, func
        )
        record.extra_fields = extra_fields  # type: ignore[attr-defined]
        self._logger.handle(record)

    def debug(self, msg: str, **fields: Any) -> None:
        self._log(logging.DEBUG, msg, **fields)

    def info(self, msg: str, **fields: Any) -> None:
        self._log(logging.INFO, msg, **fields)

    def warning(self, msg: str, **fields: Any) -> None:
        self._log(logging.WARNING, msg, **fields)

    def error(self, msg: str, **fields: Any) -> None:
        self._log(logging.ERROR, msg, **fields)

    def exception(self, msg: str, **fields: Any) -> None:
        """Log the active exception's traceback at ERROR level."""
        fields["exception"] = traceback.format_exc()
        self._log(logging.ERROR, msg, **fields)


def configure_logging(config: LogConfig | None = None) -> None:
    """Send all records to stderr in the configured format.

    stdout stays reserved for command output.
    """
    config = config or LogConfig()

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, config.level))
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    formatter: logging.Formatter = (
        StructuredFormatter(config) if config.format == "json" else TextFormatter(config)
    )
    handler.setFormatter(formatter)
    root_logger.addHandler(handler)


def get_logger(name: str) -> Logger:
    """Structured logger for a module (pass ``__name__``)."""
    return Logger(name)


# ============================================================================
# Fit Logging
# ============================================================================


@dataclass
class FitLog:
    """Log entry for one model fit."""

    model: str
    lead_time_h: int
    target_date: date
    duration_ms: float

    iterations: int
    """EM iterations or optimizer evaluations."""

    converged: bool

    flags: list[str] = field(default_factory=list)
    """Numerical fallbacks taken during the fit."""


class FitLogger:
    """Logger for model fits.

    Non-converged fits are logged as warnings, all others at debug level.
    """

    def __init__(self, logger: Logger | None = None) -> None:
        self._logger = logger or get_logger("gaugecal.fit")

    def log_fit(
        self,
        model: str,
        lead_time_h: int,
        target_date: date,
        duration_ms: float,
        iterations: int,
        converged: bool,
        flags: list[str] | None = None,
    ) -> FitLog:
        """Log a completed fit and return its entry."""
        entry = FitLog(
            model=model,
            lead_time_h=lead_time_h,
            target_date=target_date,
            duration_ms=duration_ms,
            iterations=iterations,
            converged=converged,
            flags=list(flags or []),
        )
        fields: dict[str, Any] = {
            "model": model,
            "lead_time_h": lead_time_h,
            "target_date": target_date,
            "duration_ms": round(duration_ms, 2),
            "iterations": iterations,
        }
        if entry.flags:
            fields["flags"] = ",".join(sorted(set(entry.flags)))

        if converged:
            self._logger.debug("Fit completed", **fields)
        else:
            self._logger.warning("Fit did not converge", **fields)
        return entry
