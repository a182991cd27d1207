import logging
import os
from typing import Optional

from factoredot.core.backend import BaseBackend
from factoredot.core.exception import ConfigError
from factoredot.logging.dash_logger import DashboardLogger
from factoredot.logging.fancy import get_factoredot_log_handler
from factoredot.types import RunTweaks, Strategy

THREADS_ENV = "FOT_THREADS"


def configure_logger(log_level=logging.INFO, *, dashboard: bool = False) -> DashboardLogger:
    """
    Attach the coloured console handler to the "factoredot" logger.

    :returns: The dashboard the handler coordinates with (hidden unless
        `dashboard` is set).
    """
    dash_logger = DashboardLogger(display=dashboard)
    handler = get_factoredot_log_handler(dash_logger)

    logger = logging.getLogger("factoredot")
    logger.setLevel(log_level)
    if handler not in logger.handlers:
        logger.addHandler(handler)
    logger.propagate = False
    return dash_logger


def worker_cap(environ=None) -> Optional[int]:
    """
    The worker limit from FOT_THREADS, or None when unset.

    :raises ConfigError: if the variable is not a positive integer.
    """
    environ = os.environ if environ is None else environ
    raw = environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
    return value


def make_backend(
    tweaks: RunTweaks = RunTweaks(),
    dash_logger: Optional[DashboardLogger] = None,
    *,
    strategy: Optional[Strategy] = None,
    environ=None,
) -> BaseBackend:
    """
    Pick the sweep backend: async when more than one worker is allowed.

    :param strategy: Force "sync" or "async".
    """
    workers = tweaks.max_workers
    cap = worker_cap(environ)
    if cap is not None:
        workers = min(workers, cap)
    if strategy is None:
        strategy = "async" if workers > 1 else "sync"

    logger = logging.getLogger("factoredot")
    logger.debug(f"Creating {strategy} backend with {workers} worker(s)")
    if strategy == "async":
        from factoredot.core.backend.async_backend import AsyncBackend

        return AsyncBackend(dash_logger, max_concurrent=workers)
    elif strategy == "sync":
        from factoredot.core.backend.sync_backend import SyncBackend

        return SyncBackend(dash_logger)
    raise ConfigError(f"Unknown strategy '{strategy}'")
