"""
Logging configuration shared by the test session.
"""

import logging
from typing import Optional, Union

from rompy.logging import LogFormat, LogLevel, config, get_logger

logger = None


def _level(level: Optional[Union[int, str, LogLevel]]) -> LogLevel:
    if isinstance(level, LogLevel):
        return level
    if isinstance(level, int):
        level = logging.getLevelName(level)
    if isinstance(level, str) and level.upper() in LogLevel.__members__:
        return LogLevel[level.upper()]
    return LogLevel.INFO


def configure_test_logging(
    level: Optional[Union[int, str, LogLevel]] = None,
    format_str: Optional[Union[str, LogFormat]] = None,
) -> None:
    """Configure rompy logging for the equity_collectivity tests.

    Args:
        level: Logging level as an int, a name or a LogLevel, INFO by default.
        format_str: Log format name or LogFormat, VERBOSE by default.
    """
    level = _level(level)
    if isinstance(format_str, str) and format_str.upper() in LogFormat.__members__:
        format_str = LogFormat[format_str.upper()]
    elif not isinstance(format_str, LogFormat):
        format_str = LogFormat.VERBOSE
    logging.basicConfig(
        level=level.value, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    config.update(level=level, format=format_str)
    logging.getLogger(__name__).debug("Test logging configured at level %s", level)


def get_test_logger(name: str) -> logging.Logger:
    """Logger for a test module, configuring the session logging on first use."""
    global logger
    if logger is None:
        configure_test_logging()
        logger = get_logger(__name__)
    return logging.getLogger(name)
