"""Structured logging for simulator runs.

Every line carries wall-clock time; lines emitted inside ``run_context`` also
carry the scenario, seed and policy of the run, and any ``tick`` field is
echoed as virtual seconds so event logs and diagnostics line up.
"""

from __future__ import annotations

import contextlib
import logging
import os
import sys
from typing import Iterator

import structlog
from structlog.typing import EventDict, WrappedLogger

LEVEL_ENV = "LOG_LEVEL"


def add_virtual_seconds(logger: WrappedLogger, method: str, event_dict: EventDict) -> EventDict:
    tick = event_dict.get("tick")
    if isinstance(tick, int):
        event_dict["vt_s"] = round(tick / 1000, 3)
    return event_dict


def setup_logging(log_level: str = "INFO") -> None:
    """Configure structlog. JSON_LOGS=1 renders JSON lines for batch sweeps, default is console."""
    use_json = os.environ.get("JSON_LOGS", "").strip() in ("1", "true", "yes")
    level = getattr(logging, log_level.upper(), logging.INFO)

    renderer = (
        structlog.processors.JSONRenderer(sort_keys=True)
        if use_json
        else structlog.dev.ConsoleRenderer()
    )

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            add_virtual_seconds,
            structlog.processors.StackInfoRenderer(),
            structlog.dev.set_exc_info,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=True,
    )

    # sweep workers read it back in worker_logging()
    os.environ[LEVEL_ENV] = logging.getLevelName(level)
    logging.getLogger("asyncio").setLevel(logging.WARNING)


def worker_logging() -> None:
    """Process-pool initializer: same configuration as the parent process."""
    setup_logging(os.environ.get(LEVEL_ENV, "INFO"))


@contextlib.contextmanager
def run_context(name: str, seed: int, policy: str) -> Iterator[None]:
    with structlog.contextvars.bound_contextvars(scenario=name, seed=seed, policy=policy):
        yield
