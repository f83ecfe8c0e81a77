"""
File: powercorefw/utils.py
General utility functions for PowerCoreFW.

This module contains clock, timing, seeding and logging helpers shared by
the pipeline stages.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import logging
import time
from typing import Any, Callable, Optional, Tuple, TypeVar

import numpy as np

T = TypeVar("T")

logging.getLogger("powercorefw").addHandler(logging.NullHandler())


def get_logger(name: str) -> logging.Logger:
    """
    Return the module logger for ``name``.

    All loggers live under the ``powercorefw`` namespace so a single
    ``logging.basicConfig`` call in the CLI controls the whole package.
    """
    if not name.startswith("powercorefw"):
        name = f"powercorefw.{name}"
    return logging.getLogger(name)


def now() -> int:
    """
    Return the current timestamp in milliseconds.

    Returns:
        The current time as milliseconds since epoch

    Examples:
        >>> now()
        1680000000000
    """
    return int(time.time() * 1000)


def monotonic_seconds() -> float:
    """Return a monotonic clock reading in seconds (for durations only)."""
    return time.perf_counter()


def timed(func: Callable[..., T], *args: Any, **kwargs: Any) -> Tuple[T, float]:
    """
    Call ``func`` and measure its wall-clock duration on the monotonic clock.

    Returns:
        A tuple (result, seconds)

    Examples:
        >>> result, seconds = timed(sum, [1, 2, 3])
        >>> result
        6
    """
    start = time.perf_counter()
    result = func(*args, **kwargs)
    return result, time.perf_counter() - start


def seeded_rng(seed: Optional[int]) -> np.random.Generator:
    """
    Return a numpy Generator for ``seed``.

    Every randomised step of the pipeline draws from a generator built here so
    (seed, data, config) fully determines its output.
    """
    return np.random.default_rng(seed)


def format_real(value: float) -> str:
    """
    Format a float with full round-trip precision.

    ``repr`` of a Python float is the shortest string that parses back to the
    same double, which is what the tabular format and the model documents need.

    Examples:
        >>> format_real(0.1)
        '0.1'
    """
    return repr(float(value))
