"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import os
import logging

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _resolve_level(level_name: str) -> int:
    """
    Converts a level name such as ``"debug"`` into its numeric value.

    Args:
        level_name (str): Case-insensitive logging level name.

    Returns:
        int: The numeric logging level.

    Raises:
        ValueError: If the name is not a known logging level.
    """
    numeric_level = getattr(logging, str(level_name).upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {level_name}")
    return numeric_level


LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

logging.basicConfig(level=_resolve_level(LOG_LEVEL), format=LOG_FORMAT)


def get_logger(name: str = None) -> logging.Logger:
    """
    Retrieves a logger instance configured with the specified name.

    Args:
        name (str, optional): The name of the logger. If None, the root logger is
            returned.

    Returns:
        logging.Logger: A configured logger instance.
    """
    return logging.getLogger(name)


def set_log_level(level_name: str) -> None:
    """
    Changes the root logging level at runtime (used by ``--verbose``).

    Args:
        level_name (str): Case-insensitive logging level name.
    """
    logging.getLogger().setLevel(_resolve_level(level_name))
