from __future__ import annotations

import functools
import logging
import sys
import time
from typing import TYPE_CHECKING, ParamSpec, TypeVar

if TYPE_CHECKING:
    from collections.abc import Callable

_P = ParamSpec("_P")
_R = TypeVar("_R")


def timed(f: Callable[_P, _R]) -> Callable[_P, _R]:
    """Log the wall-clock time of each call to f at DEBUG level."""
    logger = logging.getLogger(f.__module__)

    @functools.wraps(f)
    def wrapper(*args: _P.args, **kwargs: _P.kwargs) -> _R:
        start = time.perf_counter()
        try:
            return f(*args, **kwargs)
        finally:
            logger.debug("%s took %.3fs", f.__qualname__, time.perf_counter() - start)

    return wrapper


def configure_logging(verbosity: int = 0) -> None:
    """Send mmcl log records to standard error.

    verbosity 0 shows warnings, 1 info, 2 or more debug.
    """
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbosity, 2)]
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"),
    )
    root = logging.getLogger("mmcl")
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(level)
