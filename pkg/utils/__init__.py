"""Logging, error documents, artifact writers and charts shared by the lab modules."""

from .logger import get_logger, run_log, set_level, setup_logger

__all__ = ["get_logger", "run_log", "set_level", "setup_logger"]
