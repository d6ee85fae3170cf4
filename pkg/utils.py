"""Utilities Module."""

import os

import numpy as np

from errors import InvalidSpecification
from logutils import get_logger

logger = get_logger(__name__)


def get_configs(config_name, strict=False, default_value=None):
    """
    Retrieves the value of a configuration from the environment variables.

    Args:
        config_name (str): The name of the configuration to retrieve.
        strict (bool): If True, raises an error if the configuration
            is not found. Default is False.
        default_value (str): The default value to return if the configuration
            is not found and strict is False. Default is None.

    Returns:
        str: The value of the configuration, or default_value if not found and
            strict is False.

    Raises:
        KeyError: If the configuration is not found and strict is True.
        ValueError: If the configuration value is empty and strict is True.
    """
    try:
        value = (
            os.environ[config_name]
            if strict
            else os.environ.get(config_name) or default_value
        )
        if strict and (value is None or value.strip() == ""):
            raise ValueError(f"Configuration '{config_name}' is missing or empty.")
        return value
    except KeyError as error:
        logger.error(
            "Configuration '%s' not found in environment variables: %s",
            config_name,
            error,
        )
        raise
    except ValueError as error:
        logger.error("Configuration '%s' is empty: %s", config_name, error)
        raise


def default_threads() -> int:
    """Worker count from ``PIFPAF_THREADS``, else the CPU count."""
    value = get_configs("PIFPAF_THREADS", default_value=str(os.cpu_count() or 1))
    try:
        threads = int(value)
    except ValueError as error:
        logger.error("PIFPAF_THREADS must be an integer, got '%s'", value)
        raise InvalidSpecification(f"PIFPAF_THREADS must be an integer, got '{value}'.") from error
    return max(threads, 1)


def parse_float_list(text: str) -> list[float]:
    """
    Parses ``"1.16, 1.38"`` into floats.

    Raises:
        InvalidSpecification: If an item is not a number.
    """
    try:
        return [float(item) for item in str(text).split(",") if item.strip()]
    except ValueError as error:
        raise InvalidSpecification(f"Expected comma-separated numbers, got '{text}'.") from error


def parse_pair(text: str) -> tuple[float, float]:
    """Parses ``"lo,hi"`` into an ordered pair."""
    values = parse_float_list(text)
    if len(values) != 2 or not values[0] < values[1]:
        raise InvalidSpecification(f"Expected 'lower,upper' with lower < upper, got '{text}'.")
    return values[0], values[1]


def parse_grid(text: str) -> np.ndarray:
    """
    Parses ``start:stop:step`` (inclusive of ``stop``) or a comma list.

    Raises:
        InvalidSpecification: On malformed or empty grids.
    """
    if ":" not in str(text):
        grid = np.array(parse_float_list(text))
    else:
        parts = str(text).split(":")
        try:
            start, stop, step = (float(part) for part in parts)
        except ValueError as error:
            raise InvalidSpecification(
                f"Expected a grid 'start:stop:step', got '{text}'."
            ) from error
        if step <= 0 or stop < start:
            raise InvalidSpecification(f"Grid '{text}' is empty.")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        grid = start + step * np.arange(count)

    if grid.size == 0:
        raise InvalidSpecification(f"Grid '{text}' is empty.")
    return grid
