"""Utility modules for configuration, logging and terminal output."""

from .colors import Colors
from .logger import get_logger, setup_logger

__all__ = ["Colors", "get_logger", "setup_logger"]
