"""
Logging utilities for AnosovLab.

Every module logs through a child of the "anosovlab" logger. The parent is
configured once, with a rich console handler on stderr (stdout is kept for
reports) and a rotating file handler under logs/. A run can additionally
mirror its records into a log file inside its output directory.
"""

import logging
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Iterator, Optional, Union

from rich.console import Console
from rich.logging import RichHandler

from config import LOG_FILE, LOG_LEVEL, VERBOSE_OUTPUT

ROOT = "anosovlab"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _level(level: str) -> int:
    return getattr(logging, level.upper())


def setup_logger(
    name: str = ROOT,
    log_file: Optional[Path] = LOG_FILE,
    level: str = LOG_LEVEL,
    verbose: bool = VERBOSE_OUTPUT,
) -> logging.Logger:
    """
    Configure the lab's parent logger (once) and return the named child.

    Args:
        name: Logger name; "anosovlab" itself or a module name below it.
        log_file: Rotating log file. If None, only console logging is enabled.
        level: The logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        verbose: Show times and source paths on the console.

    Returns:
        The configured logger instance.
    """
    root = logging.getLogger(ROOT)
    if not root.handlers:
        root.setLevel(_level(level))
        root.propagate = False

        console = RichHandler(
            console=Console(stderr=True),
            rich_tracebacks=True,
            markup=False,
            show_time=verbose,
            show_path=verbose,
            omit_repeated_times=not verbose,
        )
        console.setLevel(_level(level))
        root.addHandler(console)

        if log_file:
            try:
                log_file.parent.mkdir(parents=True, exist_ok=True)
                handler = RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=5, encoding="utf-8")
                handler.setFormatter(logging.Formatter(FILE_FORMAT))
                handler.setLevel(_level(level))
                root.addHandler(handler)
            except OSError as e:
                root.error(f"Failed to create file handler: {e}")

    if name == ROOT or name.startswith(ROOT + "."):
        return logging.getLogger(name)
    return logging.getLogger(f"{ROOT}.{name}")


def get_logger(name: str) -> logging.Logger:
    """
    Logger for a module, e.g. get_logger(__name__) in poincare.py gives
    "anosovlab.poincare".
    """
    return setup_logger(name)


def set_level(level: str) -> None:
    """Change the level of the lab's loggers and of every handler on the parent."""
    root = setup_logger(ROOT)
    root.setLevel(_level(level))
    for handler in root.handlers:
        handler.setLevel(_level(level))


@contextmanager
def run_log(path: Union[str, Path]) -> Iterator[Path]:
    """Mirror the lab's records into path while the block runs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = setup_logger(ROOT)
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(FILE_FORMAT))
    handler.setLevel(root.level)
    root.addHandler(handler)
    try:
        yield path
    finally:
        root.removeHandler(handler)
        handler.close()
