"""Logging setup."""
import sys

from loguru import logger


def configure_logging(level: str = "INFO", json_logs: bool = False) -> None:
    """Route loguru output to stderr.

    Args:
        level: Minimum level to emit
        json_logs: Emit one JSON object per record instead of text lines
    """
    logger.remove()
    if json_logs:
        logger.add(sys.stderr, level=level.upper(), serialize=True)
    else:
        logger.add(
            sys.stderr,
            level=level.upper(),
            format="<green>{time:HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | {extra} | {message}",
        )
