"""
File: powercorefw/types.py
Type checking functions for PowerCoreFW.

This module contains predicates for the value kinds flowing through the
pipeline: finite reals, numeric vectors and variable identifiers.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""
import math
import re
from typing import Any

import numpy as np

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.:\-]*$")


def is_number(obj: Any) -> bool:
    """
    Check if obj is a real number (int, float or numpy scalar), excluding bool.

    Examples:
        >>> is_number(1)
        True
        >>> is_number(True)
        False
    """
    if isinstance(obj, bool):
        return False
    return isinstance(obj, (int, float, np.integer, np.floating))


def is_finite(obj: Any) -> bool:
    """
    Check if obj is a finite real number.

    Examples:
        >>> is_finite(float("inf"))
        False
    """
    return is_number(obj) and math.isfinite(float(obj))


def is_vector(obj: Any) -> bool:
    """
    Check if obj is a one-dimensional sequence of finite real numbers.

    Examples:
        >>> is_vector([1.0, 2.0])
        True
        >>> is_vector([[1.0]])
        False
    """
    try:
        arr = np.asarray(obj, dtype=np.float64)
    except (TypeError, ValueError):
        return False
    return arr.ndim == 1 and bool(np.all(np.isfinite(arr)))


def is_identifier(obj: Any) -> bool:
    """
    Check if obj is usable as a variable (column) name.

    Names start with a letter or underscore; dots, colons and dashes are
    accepted after that so interface-qualified counters such as
    ``net_rx_bytes:eth0`` stay legal.
    """
    return isinstance(obj, str) and bool(_IDENT_RE.match(obj))


def is_constant(obj: Any) -> bool:
    """Check if a numeric vector has zero spread (all entries equal)."""
    arr = np.asarray(obj, dtype=np.float64)
    return arr.size == 0 or bool(np.all(arr == arr.flat[0]))
