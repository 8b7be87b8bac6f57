"""Logging setup"""
import logging
import os
import sys
from logging.handlers import RotatingFileHandler

from pythonjsonlogger import jsonlogger

from app.core.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

_configured = False


def configure_logging(level: str | None = None) -> None:
    """Install stderr (and optional rotating file) handlers once"""
    global _configured
    if _configured:
        return

    if settings.LOG_JSON:
        formatter = jsonlogger.JsonFormatter(LOG_FORMAT)
    else:
        formatter = logging.Formatter(LOG_FORMAT)

    # stdout is reserved for RESULT lines
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.LOG_FILE:
        log_dir = os.path.dirname(settings.LOG_FILE)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        handlers.append(RotatingFileHandler(settings.LOG_FILE, maxBytes=10485760, backupCount=5))

    for handler in handlers:
        handler.setFormatter(formatter)

    logging.basicConfig(level=(level or settings.LOG_LEVEL).upper(), handlers=handlers)
    _configured = True
