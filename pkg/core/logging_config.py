"""
Centralized logging setup. Call setup_logging() once at startup.

Logs go to stderr so command output on stdout stays clean for piping.
"""

import logging
import sys
from typing import Optional

from core.config import settings


def setup_logging(level_name: Optional[str] = None) -> None:
    level = getattr(logging, (level_name or settings.LOG_LEVEL).upper(), logging.INFO)

    if settings.is_production:
        fmt = logging.Formatter(fmt="%(levelname)s %(message)s")
    else:
        fmt = logging.Formatter(
            fmt="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
            datefmt="%Y-%m-%dT%H:%M:%S",
        )

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(fmt)

    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()
    root.addHandler(handler)

    # Silence noisy third-party loggers
    logging.getLogger("plyfile").setLevel(logging.WARNING)
