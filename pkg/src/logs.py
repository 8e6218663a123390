#!/usr/bin/env python3
"""Structured JSON logging for QuantBench.

Emits one JSON object per log line on stdout ({timestamp, level, service,
message, runId}) so CLI runs, optimizer workers and the API server all produce
the same machine-readable stream.
"""

import contextvars
import json
import logging
import re
import sys

SERVICE = "quantbench"

# Correlation id for one CLI command or one API request. Optimizer workers
# receive it explicitly and re-bind it in the child process.
run_id_var = contextvars.ContextVar("run_id", default=None)

# Provider URLs may carry credentials or API keys.
_URL_CREDENTIALS_RE = re.compile(r"://[^/\s:@]+:[^/\s@]+@")
_QUERY_SECRET_RE = re.compile(r"(?i)\b(apikey|api_key|token)=[^&\s]+")


def mask(text: str) -> str:
    text = _URL_CREDENTIALS_RE.sub("://***:***@", text)
    return _QUERY_SECRET_RE.sub(r"\1=***", text)


_LEVEL_MAP = {"WARNING": "warn", "CRITICAL": "error"}


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "timestamp": self.formatTime(record, "%Y-%m-%d %H:%M:%S"),
            "level": _LEVEL_MAP.get(record.levelname, record.levelname.lower()),
            "service": SERVICE,
            "logger": record.name,
            "message": mask(record.getMessage()),
        }
        run_id = run_id_var.get()
        if run_id:
            entry["runId"] = run_id
        if record.exc_info:
            entry["stack"] = self.formatException(record.exc_info)
        return json.dumps(entry)


def configure(level: int = logging.INFO) -> None:
    """Install a single JSON handler on the root logger.

    Idempotent; also called in optimizer worker processes, which start with a
    fresh interpreter under the spawn start method.
    """
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(level)


configure()
