"""
Logging setup shared by the CLI and the experiment runners.

Each CLI invocation or experiment carries a run ID in a context variable so
log lines from worker threads can be tied back to the manifest that run wrote.
"""

import json
import logging
import uuid
from collections.abc import Callable, MutableMapping
from contextvars import ContextVar
from datetime import datetime, timezone

UTC = timezone.utc
from functools import wraps
from typing import Any, TypeVar

_current_run: ContextVar[str | None] = ContextVar("mlrhar_run_id", default=None)

F = TypeVar("F", bound=Callable[..., Any])

# Record attributes copied verbatim into structured output when present
CONTEXT_ATTRS = ("experiment", "action")


class StructuredFormatter(logging.Formatter):
    """One JSON object per record."""

    def format(self, record: logging.LogRecord) -> str:
        entry: dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created, UTC).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "run_id": _current_run.get(),
        }
        for attr in CONTEXT_ATTRS:
            value = getattr(record, attr, None)
            if value is not None:
                entry[attr] = value
        entry.update(getattr(record, "extra_fields", None) or {})
        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


class TextFormatter(logging.Formatter):
    """Plain lines for terminals, suffixed with the short run ID."""

    def __init__(self) -> None:
        super().__init__("%(asctime)s %(levelname)-7s %(name)s: %(message)s")

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        current = _current_run.get()
        if current is None:
            return line
        return f"{line} (run={current[:8]})"


class CorrelatedLogger(logging.LoggerAdapter):  # type: ignore[type-arg]
    """
    Adapter accepting ``experiment=``, ``action=`` and ``extra_fields=``
    keywords on every logging call and attaching them to the record.
    """

    def process(
        self, msg: Any, kwargs: MutableMapping[str, Any]
    ) -> tuple[Any, MutableMapping[str, Any]]:
        extra = dict(kwargs.get("extra") or {})
        for key in (*CONTEXT_ATTRS, "extra_fields"):
            value = kwargs.pop(key, None)
            if value:
                extra[key] = value
        kwargs["extra"] = extra
        return msg, kwargs


def setup_structured_logging(log_level: str = "INFO", json_format: bool = True) -> None:
    """Route the root logger to stderr, JSON lines unless json_format is False."""
    handler = logging.StreamHandler()
    handler.setFormatter(StructuredFormatter() if json_format else TextFormatter())
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO), handlers=[handler], force=True
    )


def new_run_id() -> str:
    return uuid.uuid4().hex


def set_run_id(value: str | None) -> None:
    _current_run.set(value)


def get_run_id() -> str | None:
    return _current_run.get()


def with_run_id(func: F) -> F:
    """Give the call a fresh run ID unless one is already active."""

    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        if _current_run.get() is None:
            _current_run.set(new_run_id())
        return func(*args, **kwargs)

    return wrapper  # type: ignore[return-value]


def get_logger(name: str) -> CorrelatedLogger:
    return CorrelatedLogger(logging.getLogger(name))
