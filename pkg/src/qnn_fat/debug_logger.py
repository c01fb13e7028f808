"""Debug logging utilities for qnn_fat."""

import logging
import sys
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, Tuple

BACKEND_NAME = "qnn_fat.debug"


def stdout_backend() -> logging.Logger:
    """The package logger, with exactly one handler bound to the current ``sys.stdout``."""
    backend = logging.getLogger(BACKEND_NAME)
    for old in list(backend.handlers):
        backend.removeHandler(old)
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter("%(message)s"))
    backend.addHandler(handler)
    backend.setLevel(logging.DEBUG)
    backend.propagate = False
    return backend


class DebugLogger:
    """Prefixes every line with ``DEBUG:`` and drops everything while disabled.

    ``logger`` is any object with a ``debug(str)`` method: a standard
    ``logging.Logger`` or a ``StringLogger``.
    """

    def __init__(self, enabled: bool = False, logger: Optional[logging.Logger] = None):
        self.enabled = enabled
        self.logger = stdout_backend() if logger is None else logger

    def _emit(self, text: str) -> None:
        if self.enabled:
            self.logger.debug(f"DEBUG: {text}")

    def log(self, message: str, *args: Any) -> None:
        """Log ``message``, formatted with ``args`` when given."""
        if self.enabled:
            self._emit(message.format(*args) if args else message)

    def log_step(self, step: str, description: str) -> None:
        self._emit(f"[{step}] {description}")

    def log_config(self, label: str, values: dict) -> None:
        """Log a configuration mapping on one line."""
        self._emit(f"{label}: " + ", ".join(f"{k}={v}" for k, v in values.items()))

    def log_epoch(
        self, epoch: int, loss: float, test_acc: float, lr: float, enabled: str
    ) -> None:
        self._emit(
            f"[EPOCH {epoch}] loss={loss:.6f} test_acc={test_acc:.2f} "
            f"lr={lr:g} enabled={enabled}"
        )

    def log_fault(self, fault: Any, accuracy: float) -> None:
        self._emit(f"Fault {fault}: accuracy={accuracy:.2f}")


class StringLogger:
    """Captures messages in memory; stands in for a ``logging.Logger`` in tests
    and in the CLI's JSON output path.
    """

    def __init__(self):
        self.records: List[Tuple[str, str]] = []

    def _record(self, level: str, message: str) -> None:
        self.records.append((level, message))

    def debug(self, message: str) -> None:
        self._record("DEBUG", message)

    def info(self, message: str) -> None:
        self._record("INFO", message)

    def warning(self, message: str) -> None:
        self._record("WARNING", message)

    def error(self, message: str) -> None:
        self._record("ERROR", message)

    @property
    def messages(self) -> List[str]:
        return [message for _, message in self.records]

    def get_logs(self) -> str:
        """Get all logged messages as a single string."""
        return "\n".join(self.messages)

    def clear(self) -> None:
        self.records.clear()


_debug_logger: Optional[DebugLogger] = None


def get_debug_logger() -> DebugLogger:
    """The process-wide logger; disabled until a session or ``set_debug_mode`` enables it."""
    global _debug_logger
    if _debug_logger is None:
        _debug_logger = DebugLogger(False)
    return _debug_logger


def set_debug_mode(enabled: bool, logger: Optional[logging.Logger] = None) -> None:
    """Replace the process-wide logger."""
    global _debug_logger
    _debug_logger = DebugLogger(enabled, logger)


@contextmanager
def debug_session(enabled: bool, logger=None) -> Iterator[DebugLogger]:
    """Turn debug logging on for the duration of one public call.

    Nested sessions that do not request debug output leave an enclosing
    enabled session untouched, so ``cmd_train(debug=True)`` keeps logging
    while ``train()`` runs inside it.
    """
    global _debug_logger
    previous = _debug_logger
    if enabled or previous is None or not previous.enabled:
        set_debug_mode(enabled, logger)
    try:
        yield get_debug_logger()
    finally:
        _debug_logger = previous
