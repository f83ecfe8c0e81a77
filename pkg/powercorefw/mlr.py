"""
File: powercorefw/mlr.py
Multiple linear regression for PowerCoreFW.

Ordinary least squares estimate of watts = intercept + coefficients . x,
solved with a column-pivoted QR factorization of the centered, column-scaled
design matrix rather than by inverting X'X. Columns found to be (numerically)
linearly dependent on the others get a zero coefficient and a recorded
warning instead of failing the fit.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .dataset import Dataset
from .security import InputValidationError, validate_names, validate_vector
from .utils import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class LinearModel:
    """Fitted MLR model: intercept (alpha), coefficients (beta) and residual mean."""

    intercept: float
    coefficients: Tuple[float, ...]
    features: Tuple[str, ...]
    residual_mean: float = 0.0
    target: str = "power_w"
    warnings: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.coefficients) != len(self.features):
            raise InputValidationError("coefficients and features must have the same length")

    def predict(self, x: Any) -> float:
        return predict_mlr(self, x)

    def predict_many(self, matrix: Any) -> np.ndarray:
        """Vectorized prediction for a (rows, features) matrix."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(self.features):
            raise InputValidationError(
                f"expected a (rows, {len(self.features)}) matrix, got shape {matrix.shape}"
            )
        return self.intercept + matrix @ np.asarray(self.coefficients, dtype=np.float64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "intercept": self.intercept,
            "coefficients": list(self.coefficients),
            "residual_mean": self.residual_mean,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], features: Sequence[str], target: str) -> "LinearModel":
        return cls(
            float(doc["intercept"]),
            tuple(float(c) for c in doc["coefficients"]),
            tuple(features),
            float(doc.get("residual_mean", 0.0)),
            target,
            tuple(doc.get("warnings", ())),
        )


def _rank_tolerance(r: np.ndarray, shape: Tuple[int, int]) -> float:
    if r.size == 0:
        return 0.0
    return max(shape) * np.finfo(np.float64).eps * abs(r[0, 0])


def solve_least_squares(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, List[int]]:
    """
    Minimum-residual solution of x @ beta ~= y by pivoted QR.

    Columns beyond the numerical rank get coefficient 0.

    Returns:
        (beta, indices of dropped columns)
    """
    rows, cols = x.shape
    if cols == 0:
        return np.zeros(0), []

    norms = np.linalg.norm(x, axis=0)
    zero = norms == 0.0
    scale = np.where(zero, 1.0, norms)
    q, r, perm = linalg.qr(x / scale, mode="economic", pivoting=True)

    diag = np.abs(np.diag(r))
    tol = _rank_tolerance(r, x.shape)
    rank = int(np.sum(diag > tol)) if diag.size else 0

    beta = np.zeros(cols)
    if rank > 0:
        qty = q[:, :rank].T @ y
        z = linalg.solve_triangular(r[:rank, :rank], qty, lower=False)
        beta[perm[:rank]] = z
    beta = beta / scale
    dropped = sorted(int(i) for i in perm[rank:])
    return beta, dropped


def fit_mlr(d: Dataset, target: Optional[str] = None, features: Optional[Sequence[str]] = None) -> LinearModel:
    """
    Fit a multiple linear regression by ordinary least squares.

    Args:
        d: Training dataset
        target: Dependent variable (default: the power variable)
        features: Independent variables (default: every other variable)

    Returns:
        LinearModel; ``warnings`` names every feature whose coefficient was
        forced to zero by rank deficiency

    Raises:
        InputValidationError: Fewer rows than parameters, target among the
            features, unknown variables

    Examples:
        >>> m = fit_mlr(line, "y", ["x"])   # points (0,1), (1,3), (2,5)
        >>> m.intercept, m.coefficients
        (1.0, (2.0,))
    """
    target = target or d.power_variable()
    features = list(features) if features is not None else d.feature_names(target)
    validate_names(features, "features")
    if target in features:
        raise InputValidationError(f"target {target!r} cannot also be a feature")
    if d.n_rows < len(features) + 1:
        raise InputValidationError(
            f"need at least {len(features) + 1} rows for {len(features) + 1} parameters, got {d.n_rows}"
        )

    x = d.matrix(features)
    y = np.array(d.column(target), dtype=np.float64)

    x_mean = x.mean(axis=0) if features else np.zeros(0)
    y_mean = float(y.mean())
    beta, dropped = solve_least_squares(x - x_mean, y - y_mean)
    intercept = y_mean - float(x_mean @ beta) if features else y_mean

    warnings = []
    for i in dropped:
        message = f"feature {features[i]!r} is linearly dependent on the others; coefficient set to 0"
        logger.warning(message)
        warnings.append(message)

    residuals = y - (intercept + x @ beta)
    model = LinearModel(
        float(intercept),
        tuple(float(b) for b in beta),
        tuple(features),
        float(residuals.mean()),
        target,
        tuple(warnings),
    )
    logger.info("fitted MLR on %d rows, %d features", d.n_rows, len(features))
    return model


def predict_mlr(m: LinearModel, x: Any) -> float:
    """
    Estimate watts for one feature vector: intercept + coefficients . x.

    Raises:
        InputValidationError: Arity mismatch or non-finite input

    Examples:
        >>> predict_mlr(m, [10.0])
        21.0
    """
    x = validate_vector(x, "x", length=len(m.coefficients))
    return float(m.intercept + np.dot(np.asarray(m.coefficients, dtype=np.float64), x))


def coefficient_table(m: LinearModel) -> List[Tuple[str, float]]:
    """Rows of (variable, coefficient), intercept first."""
    return [("(intercept)", m.intercept)] + list(zip(m.features, m.coefficients))
