"""Command-line interface."""

from .cli import CLIInterface

__all__ = ["CLIInterface"]
