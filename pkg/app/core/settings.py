# app/core/settings.py
import os
import logging
from logging.handlers import RotatingFileHandler

from dotenv import load_dotenv

# Manually load the .env file at the start
load_dotenv()

logger = logging.getLogger(__name__)

# --- Constants & Configuration ---
TOOL_NAME = "reservoirforge"
TOOL_VERSION = "1.0.0"

LOG_FILE = "reservoirforge.log"
LOG_FORMAT = '%(asctime)s | %(levelname)s | %(message)s'
LOG_MAX_BYTES = 5 * 1024 * 1024
LOG_BACKUP_COUNT = 3

THREADS_ENV_VAR = "RESERVOIRFORGE_THREADS"


def get_thread_count() -> int:
    """Worker threads for grid sweeps, read from the environment on every call."""
    raw = os.getenv(THREADS_ENV_VAR, "1")
    try:
        threads = int(raw)
    except ValueError:
        logger.warning(f"Ignoring {THREADS_ENV_VAR}={raw!r}: not an integer, using 1 thread.")
        return 1
    if threads < 1:
        logger.warning(f"Ignoring {THREADS_ENV_VAR}={threads}: must be >= 1, using 1 thread.")
        return 1
    return threads


def configure_logging(log_file: str = LOG_FILE, level: int = logging.INFO) -> RotatingFileHandler:
    """
    Attaches a RotatingFileHandler to the root logger. Calling it twice with the
    same file returns the handler that is already installed.
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    target = os.path.abspath(log_file)
    for handler in root_logger.handlers:
        if isinstance(handler, RotatingFileHandler) and handler.baseFilename == target:
            return handler

    log_handler = RotatingFileHandler(
        log_file, mode='a', maxBytes=LOG_MAX_BYTES, backupCount=LOG_BACKUP_COUNT
    )
    log_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    log_handler.setLevel(level)
    root_logger.addHandler(log_handler)
    return log_handler
