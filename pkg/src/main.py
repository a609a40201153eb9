"""Main entry point for neurodiff."""

import sys
from typing import Optional, Sequence

from src.ui.cli import EXIT_USAGE, CLIInterface
from src.utils.config import ConfigError, RuntimeSettings
from src.utils.logger import get_logger, setup_logger

logger = get_logger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the application."""
    try:
        settings = RuntimeSettings.from_env()
        setup_logger(level=settings.log_level, log_file=settings.log_file)
        return CLIInterface(settings).run(argv)
    except KeyboardInterrupt:
        print("\n\nInterrupted")
        return 130
    except ConfigError as e:
        print(f"\nConfiguration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.exception("Unhandled error")
        print(f"\nFatal error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
