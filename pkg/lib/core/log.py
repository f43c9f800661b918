"""Logging setup. Library modules use logging.getLogger(__name__)."""

from __future__ import annotations

import logging
import os
from typing import Optional

_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}

_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def resolve_level(level: Optional[str] = None) -> int:
    name = (level or os.environ.get("DSI_LOG") or "warning").strip().lower()
    return _LEVELS.get(name, logging.WARNING)


def configure_logging(level: Optional[str] = None) -> logging.Logger:
    """Attach one stream handler to the package logger (idempotent)."""
    root = logging.getLogger("lib")
    root.setLevel(resolve_level(level))
    if not any(getattr(h, "_dsi", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT))
        handler._dsi = True
        root.addHandler(handler)
    return root
