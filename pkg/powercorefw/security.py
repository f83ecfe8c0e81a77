"""
File: powercorefw/security.py
Error types, input validation and audit logging for PowerCoreFW.

This module contains the exception hierarchy shared by every pipeline stage,
the validators used to reject bad input before any numeric work starts, and
the audit trail the CLI writes with --audit-log.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import inspect
import math
import threading
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np


class PowerCoreError(Exception):
    """Base exception for PowerCoreFW errors."""

    pass


class InputValidationError(PowerCoreError, ValueError):
    """Raised when input validation fails."""

    pass


class DatasetError(PowerCoreError):
    """Raised when a dataset cannot be built, read or written."""

    pass


class TableFormatError(DatasetError):
    """Raised for a malformed line of a tabular file."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ModelError(PowerCoreError):
    """Raised when a model cannot be trained, loaded or evaluated."""

    pass


class DivergenceError(ModelError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class CollectorError(PowerCoreError):
    """Raised for counter sampling and power stream problems."""

    pass


class StreamFormatError(CollectorError):
    """Raised for a malformed or out-of-order power stream line."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ReplayRequiredError(CollectorError):
    """Raised when live sampling is impossible on this host."""

    pass


class MetricError(PowerCoreError):
    """Raised when an accuracy metric is undefined for the given series."""

    pass


class UsageError(PowerCoreError):
    """Raised for command-line usage errors (exit code 2)."""

    pass


def validate_trainer(trainer: Any, param_name: str = "trainer") -> Callable:
    """
    Validate a model trainer: a callable taking (dataset, target, features).

    Raises:
        InputValidationError: Not callable, or cannot take three positional arguments
    """
    if not callable(trainer):
        raise InputValidationError(f"{param_name} must be callable, got {type(trainer).__name__}")
    try:
        inspect.signature(trainer).bind(None, None, None)
    except TypeError:
        raise InputValidationError(f"{param_name} must accept (dataset, target, features)")
    except ValueError:
        pass  # no introspectable signature
    return trainer


def validate_finite(value: Any, param_name: str = "value") -> float:
    """
    Validate that a scalar is a finite real number.

    Returns:
        The value as a float

    Raises:
        InputValidationError: If the value is not a finite number
    """
    if isinstance(value, bool):
        raise InputValidationError(f"{param_name} must be a number, got bool")
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise InputValidationError(f"{param_name} must be a number, got {value!r}")
    if not math.isfinite(number):
        raise InputValidationError(f"{param_name} must be finite, got {number}")
    return number


def validate_vector(
    values: Any,
    param_name: str = "vector",
    length: Optional[int] = None,
    min_length: int = 0,
) -> np.ndarray:
    """
    Validate a one-dimensional vector of finite reals.

    Args:
        values: Any sequence or array of numbers
        param_name: Name of the parameter for error messages
        length: Required exact length, if any
        min_length: Required minimum length

    Returns:
        A float64 numpy array (a copy when conversion was needed)

    Raises:
        InputValidationError: On wrong shape, arity or non-finite entries

    Examples:
        >>> validate_vector([1, 2, 3], length=3)
        array([1., 2., 3.])
    """
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise InputValidationError(f"{param_name} must contain only numbers")
    if arr.ndim != 1:
        raise InputValidationError(f"{param_name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise InputValidationError(
            f"{param_name} has arity {arr.shape[0]}, expected {length}"
        )
    if arr.shape[0] < min_length:
        raise InputValidationError(
            f"{param_name} needs at least {min_length} values, got {arr.shape[0]}"
        )
    if not np.all(np.isfinite(arr)):
        raise InputValidationError(f"{param_name} contains non-finite values")
    return arr


def validate_probability(value: Any, param_name: str = "value") -> float:
    """Validate a real in the closed interval [0, 1]."""
    number = validate_finite(value, param_name)
    if not 0.0 <= number <= 1.0:
        raise InputValidationError(f"{param_name} must lie in [0, 1], got {number}")
    return number


def validate_names(names: Sequence[str], param_name: str = "names") -> Tuple[str, ...]:
    """
    Validate a list of variable names: non-empty strings, no duplicates.

    Raises:
        InputValidationError: On empty or duplicate names
    """
    seen = set()
    duplicates = []
    for name in names:
        if not isinstance(name, str) or not name.strip():
            raise InputValidationError(f"{param_name} contains an empty or non-string name: {name!r}")
        if name in seen:
            duplicates.append(name)
        seen.add(name)
    if duplicates:
        raise InputValidationError(f"duplicate {param_name}: {sorted(set(duplicates))}")
    return tuple(names)


class AuditLogger:
    """
    Timestamped trail of stage runs and failures.

    One line per event, ``<UTC time> <STAGE>: <details>``, appended under a
    lock. With ``path=None`` the lines are only kept in ``entries``.

    Examples:
        >>> audit = AuditLogger(None)
        >>> audit.stage("select", ["a1.csv"], ["sel.csv"], {"threshold": 0.1}).split(" ", 1)[1]
        "SELECT: inputs=['a1.csv'] outputs=['sel.csv'] threshold=0.1"
    """

    def __init__(self, path: Optional[str]):
        self.path = path
        self.entries: List[str] = []
        self._lock = threading.Lock()

    def stage(
        self,
        stage: str,
        inputs: Sequence[str] = (),
        outputs: Sequence[str] = (),
        parameters: Optional[Dict[str, Any]] = None,
    ) -> str:
        settings = " ".join(f"{k}={v}" for k, v in sorted((parameters or {}).items()))
        details = f"inputs={list(inputs)} outputs={list(outputs)}"
        return self._append(stage.upper(), f"{details} {settings}".rstrip())

    def failure(self, stage: str, error: BaseException) -> str:
        return self._append("ERROR", f"{stage}: {error}")

    def _append(self, kind: str, details: str) -> str:
        stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        line = f"{stamp} {kind}: {details}"
        with self._lock:
            self.entries.append(line)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(line + "\n")
        return line
