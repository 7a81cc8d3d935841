from __future__ import annotations

import contextlib
import contextvars
import logging
import sys
import time
import uuid
from typing import Any, Iterator

import orjson


_run_id_var: contextvars.ContextVar[str | None] = contextvars.ContextVar(
    "skpd_run_id", default=None
)


def get_run_id() -> str | None:
    return _run_id_var.get()


class _RunIdFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:
        setattr(record, "run_id", get_run_id())
        return True


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, Any] = {
            "ts": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(record.created)),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        run_id = getattr(record, "run_id", None)
        if run_id:
            payload["run_id"] = run_id

        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)

        return orjson.dumps(payload, default=str).decode("utf-8")


class _StderrHandler(logging.StreamHandler):
    """Writes to the current sys.stderr at emit time."""

    def __init__(self) -> None:
        super().__init__(sys.stderr)

    @property
    def stream(self):  # type: ignore[override]
        return sys.stderr

    @stream.setter
    def stream(self, value) -> None:
        pass


def configure_json_logging(level: str = "INFO") -> None:
    """Configure process-wide JSON logging.

    This is idempotent and safe to call multiple times.
    """

    root = logging.getLogger()
    root.setLevel(getattr(logging, level.upper(), logging.INFO))

    for h in list(root.handlers):
        if getattr(h, "_skpd_json_logging", False):
            return

    handler = _StderrHandler()
    handler._skpd_json_logging = True  # type: ignore[attr-defined]
    handler.setFormatter(_JsonFormatter())
    handler.addFilter(_RunIdFilter())

    root.addHandler(handler)


@contextlib.contextmanager
def run_context(run_id: str | None = None) -> Iterator[str]:
    """Stamp every log record emitted inside the block with a run id.

    A fresh UUID4 is used when none is given.
    """

    rid = run_id or str(uuid.uuid4())
    token = _run_id_var.set(rid)
    try:
        yield rid
    finally:
        _run_id_var.reset(token)
