import logging
import sys
from typing import Optional

import structlog

from hmtml.core.config import get_settings


class StderrHandler(logging.StreamHandler):
    """Stream handler that looks up ``sys.stderr`` on every record."""

    def __init__(self) -> None:
        super().__init__(stream=None)

    @property  # type: ignore[override]
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value) -> None:
        # the stream always follows sys.stderr
        pass


def setup_logging(level: Optional[str] = None, json: Optional[bool] = None) -> None:
    """
    Configure structlog for the process.

    Falls back to the HMTML_LOG_LEVEL / HMTML_LOG_JSON settings when
    arguments are omitted. Records go through the stdlib root logger to
    whatever ``sys.stderr`` is at write time, so stdout stays free for
    command results and swapped streams never go stale.
    """
    settings = get_settings()
    level_name = (level or settings.log_level).upper()
    log_level = getattr(logging, level_name, logging.INFO)
    use_json = settings.log_json if json is None else json

    root = logging.getLogger()
    for handler in [h for h in root.handlers if isinstance(h, StderrHandler)]:
        root.removeHandler(handler)
    handler = StderrHandler()
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.setLevel(log_level)

    renderer = (
        structlog.processors.JSONRenderer()
        if use_json
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(log_level),
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )
    structlog.get_logger(__name__).debug("logging.configured", level=level_name, json=use_json)
