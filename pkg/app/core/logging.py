import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union

from app.core.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
RUN_LOG_NAME = "run.log"

Level = Union[int, str]


def _formatter() -> logging.Formatter:
    return logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)


def setup_logger(name: str, level: Level = logging.INFO) -> logging.Logger:
    """
    Package logger writing to stdout.

    Args:
        name: Logger name; submodules log through this one logger.
        level: Numeric level or its name.

    Returns:
        The configured logger. Calling again does not add a second console handler.
    """
    package_logger = logging.getLogger(name)
    package_logger.setLevel(level)
    consoles = [h for h in package_logger.handlers if type(h) is logging.StreamHandler]
    if not consoles:
        console = logging.StreamHandler(sys.stdout)
        console.setFormatter(_formatter())
        package_logger.addHandler(console)
    package_logger.propagate = False
    return package_logger


def set_level(level: Level) -> None:
    """Change the package logger and every attached handler."""
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)


@contextmanager
def run_log(run_dir: Path) -> Iterator[Path]:
    """Mirror the package log into <run_dir>/run.log for the duration of one experiment."""
    path = Path(run_dir) / RUN_LOG_NAME
    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setFormatter(_formatter())
    handler.setLevel(logger.level)
    logger.addHandler(handler)
    try:
        yield path
    finally:
        logger.removeHandler(handler)
        handler.close()


logger = setup_logger("plaque_bifurcation", settings.log_level)
