"""
File: powercorefw/evaluation.py
Accuracy metrics, k-fold cross-validation and training-cost timing.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset, read_rows, write_rows
from .security import InputValidationError, MetricError, validate_trainer, validate_vector
from .utils import get_logger, seeded_rng, timed

logger = get_logger(__name__)

DEFAULT_FOLDS = 10
METRIC_NAMES = ("SE", "AE", "PE", "APE", "ASE", "R2")
# report row holding the number of zero actuals left out of PE and APE
EXCLUDED_ROW = "PE_excluded"

# a trainer takes (training dataset, target, features) and returns a model
# exposing predict_many(matrix)
Trainer = Callable[[Dataset, str, Sequence[str]], Any]


@dataclass(frozen=True, eq=False)
class MetricVector:
    """
    Per-sample error vectors and the coefficient of determination.

    ``pe`` and ``ape`` hold NaN where the actual value is zero; those samples
    are counted in ``pe_excluded`` and left out of the aggregates.
    """

    se: np.ndarray
    ae: np.ndarray
    pe: np.ndarray
    ape: np.ndarray
    ase: np.ndarray
    r2: float
    pe_excluded: int = 0

    def vector(self, name: str) -> np.ndarray:
        try:
            return {"SE": self.se, "AE": self.ae, "PE": self.pe, "APE": self.ape, "ASE": self.ase}[name]
        except KeyError:
            raise InputValidationError(f"unknown metric: {name!r}")

    def summary(self) -> Dict[str, Tuple[float, float]]:
        """(mean, sd) of each per-sample metric, NaN entries excluded."""
        out = {}
        for name in METRIC_NAMES[:-1]:
            v = self.vector(name)
            v = v[~np.isnan(v)]
            if v.size == 0:
                out[name] = (math.nan, math.nan)
            else:
                out[name] = (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0)
        return out


def r_squared(y: Any, yhat: Any) -> float:
    """
    R^2 = 1 - SS_res / SS_tot.

    Raises:
        MetricError: Constant actual series
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    total = float(((y - y.mean()) ** 2).sum())
    if total == 0.0:
        raise MetricError("R2 is undefined for a constant actual series")
    return 1.0 - float(((y - yhat) ** 2).sum()) / total


def metrics(y: Any, yhat: Any) -> MetricVector:
    """
    Compute SE, AE, PE, APE, ASE and R^2.

    ASE scales each absolute error by the mean absolute first difference of
    the actual series, (1 / (n - 1)) * sum |y_j - y_(j-1)|, so it depends on
    the order of ``y``.

    Args:
        y: Actual values
        yhat: Estimates, same length

    Returns:
        MetricVector

    Raises:
        InputValidationError: Length mismatch or fewer than 2 samples
        MetricError: Constant ``y`` (R^2 and ASE undefined)

    Examples:
        >>> metrics([1.0, 2.0, 4.0], [1.0, 2.0, 3.0]).ase[2]
        0.6666666666666666
    """
    y = validate_vector(y, "y", min_length=2)
    yhat = validate_vector(yhat, "yhat", length=y.shape[0])

    diff = y - yhat
    ae = np.abs(diff)
    se = diff * diff

    zero = y == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = np.where(zero, np.nan, diff / np.where(zero, 1.0, y))
    ape = np.abs(pe)

    scale = float(np.abs(np.diff(y)).sum()) / (y.shape[0] - 1)
    if scale == 0.0:
        raise MetricError("ASE is undefined: the actual series has no variation")
    ase = ae / scale

    excluded = int(zero.sum())
    if excluded:
        logger.debug("%d zero-valued actuals excluded from PE/APE", excluded)
    return MetricVector(se, ae, pe, ape, ase, r_squared(y, yhat), excluded)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """
    Pooled cross-validation results.

    ``summary`` maps each metric name to (mean, sd) over all held-out samples;
    for R2 the mean is the pooled coefficient and the sd is taken over the
    per-fold values.
    """

    k: int
    seed: Optional[int]
    summary: Dict[str, Tuple[float, float]]
    fold_r2: Tuple[float, ...]
    fold_seconds: Tuple[float, ...]
    actual: np.ndarray
    estimated: np.ndarray
    row_index: np.ndarray
    pe_excluded: int = 0
    model: str = ""

    def mean(self, metric: str) -> float:
        return self.summary[metric][0]

    def sd(self, metric: str) -> float:
        return self.summary[metric][1]

    def table_rows(self) -> List[Tuple[str, float, float]]:
        return [(name, self.summary[name][0], self.summary[name][1]) for name in METRIC_NAMES]

    def trace_rows(self) -> List[Tuple[int, float, float]]:
        """(row, actual, estimated) in fold order."""
        return [
            (int(i), float(a), float(e))
            for i, a, e in zip(self.row_index, self.actual, self.estimated)
        ]


def fold_indices(n: int, k: int, seed: Optional[int]) -> List[np.ndarray]:
    """
    Seeded shuffle of row indices split into k near-equal contiguous folds.

    Raises:
        InputValidationError: k < 2 or more folds than rows
    """
    if k < 2:
        raise InputValidationError(f"k must be >= 2, got {k}")
    if n < k:
        raise InputValidationError(f"cannot make {k} folds from {n} rows")
    order = seeded_rng(seed).permutation(n)
    return [np.asarray(part) for part in np.array_split(order, k)]


def _run_fold(
    d: Dataset, target: str, features: Sequence[str], trainer: Trainer, test_idx: np.ndarray, n: int
) -> Tuple[np.ndarray, float]:
    mask = np.ones(n, dtype=bool)
    mask[test_idx] = False
    train = d.take(np.flatnonzero(mask))
    model, seconds = timed(trainer, train, target, features)
    estimates = np.asarray(model.predict_many(d.take(test_idx).matrix(features)), dtype=np.float64)
    return estimates, seconds


def cross_validate(
    d: Dataset,
    target: Optional[str],
    features: Optional[Sequence[str]],
    trainer: Trainer,
    k: int = DEFAULT_FOLDS,
    seed: Optional[int] = 0,
    workers: int = 1,
    model: str = "",
) -> EvalReport:
    """
    k-fold cross-validation with pooled metrics.

    Rows are shuffled with ``seed`` and cut into k contiguous folds; each fold
    is predicted by a model trained on the other k - 1. Metrics are computed
    once over the concatenation of all held-out (actual, estimate) pairs in
    fold order.

    Args:
        d: Dataset
        target: Dependent variable (default: the power variable)
        features: Inputs (default: every other variable)
        trainer: Callable (dataset, target, features) -> model with predict_many
        k: Fold count
        seed: Shuffle seed
        workers: Folds trained concurrently (report order is unaffected)
        model: Name recorded on the report

    Returns:
        EvalReport

    Raises:
        InputValidationError: rows < k
        MetricError: Constant held-out target

    Examples:
        >>> cross_validate(d, "power_w", ["cpu_user"], fit_mlr).mean("R2")
        0.993
    """
    validate_trainer(trainer, "trainer")
    target = target or d.power_variable()
    features = list(features) if features is not None else d.feature_names(target)
    folds = fold_indices(d.n_rows, k, seed)
    n = d.n_rows

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda idx: _run_fold(d, target, features, trainer, idx, n), folds))
    else:
        results = [_run_fold(d, target, features, trainer, idx, n) for idx in folds]

    y_all = np.asarray(d.column(target), dtype=np.float64)
    actual_parts, fold_r2, fold_seconds = [], [], []
    for idx, (estimates, seconds) in zip(folds, results):
        actual = y_all[idx]
        actual_parts.append(actual)
        fold_seconds.append(seconds)
        try:
            fold_r2.append(r_squared(actual, estimates) if actual.shape[0] > 1 else math.nan)
        except MetricError:
            fold_r2.append(math.nan)

    actual = np.concatenate(actual_parts)
    estimated = np.concatenate([r[0] for r in results])
    vec = metrics(actual, estimated)

    summary = vec.summary()
    finite_r2 = [r for r in fold_r2 if math.isfinite(r)]
    summary["R2"] = (vec.r2, float(np.std(finite_r2, ddof=1)) if len(finite_r2) > 1 else 0.0)

    report = EvalReport(
        k,
        seed,
        summary,
        tuple(fold_r2),
        tuple(fold_seconds),
        actual,
        estimated,
        np.concatenate(folds),
        vec.pe_excluded,
        model,
    )
    logger.info("%d-fold CV %s: R2=%.6f APE=%.4g", k, model or "model", vec.r2, summary["APE"][0])
    return report


@dataclass(frozen=True)
class TimingReport:
    """Wall-clock training durations of repeated fits, in seconds."""

    samples: Tuple[float, ...] = field(default=())

    @property
    def seconds(self) -> float:
        return float(np.mean(self.samples))

    @property
    def sd(self) -> float:
        return float(np.std(self.samples, ddof=1)) if len(self.samples) > 1 else 0.0

    def __float__(self) -> float:
        return self.seconds


def timing_report(
    trainer: Trainer,
    d: Dataset,
    target: Optional[str] = None,
    features: Optional[Sequence[str]] = None,
    repeats: int = 1,
) -> TimingReport:
    """
    Time ``repeats`` independent fits on the monotonic clock.

    Examples:
        >>> timing_report(fit_mlr, d, repeats=3).seconds > 0
        True
    """
    validate_trainer(trainer, "trainer")
    if repeats < 1:
        raise InputValidationError(f"repeats must be >= 1, got {repeats}")
    target = target or d.power_variable()
    features = list(features) if features is not None else d.feature_names(target)
    samples = tuple(timed(trainer, d, target, features)[1] for _ in range(repeats))
    return TimingReport(samples)


def write_report(report: EvalReport, path: Any) -> None:
    """Write the (metric, mean, sd) table followed by the PE/APE excluded-sample count."""
    rows: List[Tuple[str, Any, Any]] = list(report.table_rows())
    rows.append((EXCLUDED_ROW, report.pe_excluded, 0))
    write_rows(path, ["metric", "mean", "sd"], rows)


def write_trace(report: EvalReport, path: Any) -> None:
    write_rows(path, ["row", "actual", "estimated"], report.trace_rows())


def read_report_summary(path: Any) -> Dict[str, Tuple[float, float]]:
    """
    Read the metric rows of a (metric, mean, sd) report table back.

    Raises:
        InputValidationError: Not a report table
    """
    header, rows = read_rows(path)
    if header[:3] != ["metric", "mean", "sd"]:
        raise InputValidationError(f"{path}: not an evaluation report (header {header})")
    try:
        return {r[0]: (float(r[1]), float(r[2])) for r in rows if r[0] != EXCLUDED_ROW}
    except (IndexError, ValueError):
        raise InputValidationError(f"{path}: malformed evaluation report")


@dataclass(frozen=True)
class Ranking:
    name: str
    ape: float
    r2: float


def rank_reports(reports: Dict[str, Dict[str, Tuple[float, float]]]) -> List[Ranking]:
    """
    Order evaluated models by pooled APE mean ascending, then R2 descending.

    Ties on both keep the input order. A NaN APE ranks after every finite
    one and a NaN R2 after every finite R2 with the same APE.

    Raises:
        InputValidationError: No reports, or a report missing APE or R2
    """
    if not reports:
        raise InputValidationError("at least one evaluation report is required")
    entries = []
    for name, summary in reports.items():
        if "APE" not in summary or "R2" not in summary:
            raise InputValidationError(f"report {name!r} lacks APE or R2")
        entries.append(Ranking(name, summary["APE"][0], summary["R2"][0]))

    def key(e: Ranking) -> Tuple[bool, float, bool, float]:
        return (math.isnan(e.ape), 0.0 if math.isnan(e.ape) else e.ape,
                math.isnan(e.r2), 0.0 if math.isnan(e.r2) else -e.r2)

    return sorted(entries, key=key)
