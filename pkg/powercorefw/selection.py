"""
File: powercorefw/selection.py
Variable selection for PowerCoreFW.

This module scores every counter against the power variable with the
Maximal Information Coefficient, keeps the counters at or above a threshold,
and checks the power distribution for Gaussianity with a one-sample
Kolmogorov-Smirnov test.

MIC follows the MINE approximation: grids with x * y <= B(n) = n ** exponent
cells, the y-axis equipartitioned on ranks, the x-axis optimized by dynamic
programming over (super)clumps, both axis orientations, and mutual
information normalized by log2(min(x, y)). Every grid placement depends only
on the order and equality of values, so the score is invariant under strictly
increasing transforms of either variable.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .dataset import Dataset, VariableKind
from .security import InputValidationError, validate_probability, validate_vector
from .types import is_constant
from .utils import get_logger

logger = get_logger(__name__)

DEFAULT_THRESHOLD = 0.10
DEFAULT_EXPONENT = 0.6
DEFAULT_CLUMP = 15
KS_SIGNIFICANCE = 0.05


@dataclass(frozen=True)
class MicScore:
    variable: str
    mic: float


@dataclass(frozen=True)
class SelectionReport:
    """MIC of every candidate variable, sorted descending, and the kept subset."""

    target: str
    scores: Tuple[MicScore, ...]
    threshold: float

    @property
    def selected(self) -> List[str]:
        return [s.variable for s in self.scores if s.mic >= self.threshold]

    def score_of(self, variable: str) -> float:
        for s in self.scores:
            if s.variable == variable:
                return s.mic
        raise InputValidationError(f"no score for variable {variable!r}")

    def to_rows(self) -> List[Tuple[str, float, int]]:
        """Rows of (variable, mic, selected 0/1) in report order."""
        return [(s.variable, s.mic, int(s.mic >= self.threshold)) for s in self.scores]


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n: int

    @property
    def gaussian_rejected_at_5pct(self) -> bool:
        return self.p_value < KS_SIGNIFICANCE


def _tie_groups(sorted_values: np.ndarray) -> np.ndarray:
    """Start index of each run of equal values in a sorted vector (plus n)."""
    n = sorted_values.shape[0]
    starts = np.flatnonzero(np.diff(sorted_values)) + 1
    return np.concatenate([[0], starts, [n]])


def _equipartition(values: np.ndarray, order: np.ndarray, bins: int) -> np.ndarray:
    """
    Assign each point to one of at most ``bins`` rows holding about n / bins
    points each. Points with equal values always share a row.

    Args:
        values: Values to partition
        order: Stable argsort of ``values``
        bins: Desired number of rows

    Returns:
        Integer row label per point (indexed like ``values``)
    """
    n = values.shape[0]
    labels = np.empty(n, dtype=np.int64)
    bounds = _tie_groups(values[order])

    row = 0
    row_size = 0
    desired = n / bins
    for g in range(bounds.shape[0] - 1):
        start, stop = bounds[g], bounds[g + 1]
        size = stop - start
        if row_size != 0 and abs(row_size + size - desired) >= abs(row_size - desired):
            row += 1
            row_size = 0
            remaining_bins = bins - row
            desired = (n - start) / remaining_bins if remaining_bins > 0 else n - start
        labels[order[start:stop]] = row
        row_size += size
    return labels


def _clump_boundaries(x: np.ndarray, x_order: np.ndarray, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Clumps of the x-sorted points: maximal runs sharing a row label, where a
    group of tied x values spanning several rows forms a clump of its own.

    Returns:
        (clump label per sorted position, cumulative end position of each clump)
    """
    xs = x[x_order]
    qs = q[x_order].copy()
    bounds = _tie_groups(xs)
    tag = -1
    for g in range(bounds.shape[0] - 1):
        start, stop = bounds[g], bounds[g + 1]
        if stop - start > 1 and np.any(qs[start:stop] != qs[start]):
            qs[start:stop] = tag
            tag -= 1
    change = np.flatnonzero(qs[1:] != qs[:-1]) + 1
    labels = np.zeros(xs.shape[0], dtype=np.int64)
    labels[change] = 1
    labels = np.cumsum(labels)
    return labels, np.concatenate([change, [xs.shape[0]]])


def _optimize_x_axis(
    x: np.ndarray,
    x_order: np.ndarray,
    q: np.ndarray,
    rows: int,
    max_columns: int,
    clump_factor: int,
) -> np.ndarray:
    """
    Best mutual information (bits) for every column count 2..max_columns given
    the fixed row partition ``q``.

    Returns:
        Array ``best`` where ``best[c]`` is the best MI with at most c columns
        (entries 0 and 1 unused)
    """
    n = x.shape[0]
    clump_labels, _ = _clump_boundaries(x, x_order, q)
    k = int(clump_labels[-1]) + 1

    limit = clump_factor * max_columns
    if k > limit:
        # merge consecutive clumps into about `limit` superclumps
        positions = np.arange(n)
        clump_labels = _equipartition(clump_labels.astype(np.float64), positions, limit)
        k = int(clump_labels[-1]) + 1

    q_sorted = q[x_order]
    counts = np.zeros((k, rows), dtype=np.float64)
    np.add.at(counts, (clump_labels, q_sorted), 1.0)
    cum = np.vstack([np.zeros((1, rows)), np.cumsum(counts, axis=0)])
    totals = cum.sum(axis=1)

    # cost[s, t]: points in clumps s..t-1 times the entropy of their rows
    cost = np.full((k + 1, k + 1), np.inf)
    for t in range(1, k + 1):
        seg = cum[t] - cum[:t]
        tot = totals[t] - totals[:t]
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(seg > 0, seg * np.log2(seg), 0.0).sum(axis=1)
        cost[:t, t] = tot * np.log2(tot) - plogp

    q_counts = cum[-1]
    q_counts = q_counts[q_counts > 0]
    h_q = float(-(q_counts / n * np.log2(q_counts / n)).sum())

    best = np.zeros(max_columns + 1)
    g = cost[0].copy()  # one column covering clumps 0..t-1
    g[0] = np.inf
    previous = h_q - g[k] / n
    for columns in range(2, max_columns + 1):
        if columns > k:
            best[columns] = previous
            continue
        g = np.min(g[:, None] + cost, axis=0)
        previous = max(previous, h_q - g[k] / n)
        best[columns] = previous
    return best


def _characteristic_max(
    x: np.ndarray,
    y: np.ndarray,
    x_order: np.ndarray,
    y_order: np.ndarray,
    cells: float,
    clump_factor: int,
) -> float:
    """Max normalized MI over grids equipartitioned on y and optimized on x."""
    best_score = 0.0
    for rows in range(2, int(cells // 2) + 1):
        max_columns = int(cells // rows)
        if max_columns < 2:
            break
        q = _equipartition(y, y_order, rows)
        actual_rows = int(q.max()) + 1
        if actual_rows < 2:
            continue
        best = _optimize_x_axis(x, x_order, q, actual_rows, max_columns, clump_factor)
        for columns in range(2, max_columns + 1):
            score = best[columns] / math.log2(min(columns, rows))
            if score > best_score:
                best_score = score
    return best_score


def mic(
    x: Any,
    y: Any,
    exponent: float = DEFAULT_EXPONENT,
    clump_factor: int = DEFAULT_CLUMP,
) -> float:
    """
    Maximal Information Coefficient of two paired samples.

    Args:
        x: First variable, n >= 4 finite values
        y: Second variable, same length
        exponent: Grid budget exponent, B(n) = max(n ** exponent, 4)
        clump_factor: Superclump factor of the x-axis optimization

    Returns:
        MIC in [0, 1]; 0 when either variable is constant

    Raises:
        InputValidationError: Length mismatch or fewer than 4 points

    Examples:
        >>> mic(range(1000), range(1000))
        1.0
    """
    x = validate_vector(x, "x", min_length=4)
    y = validate_vector(y, "y", length=x.shape[0])
    if exponent <= 0 or exponent > 1:
        raise InputValidationError(f"exponent must lie in (0, 1], got {exponent}")
    if clump_factor < 1:
        raise InputValidationError(f"clump_factor must be >= 1, got {clump_factor}")
    if is_constant(x) or is_constant(y):
        return 0.0

    n = x.shape[0]
    cells = max(n ** exponent, 4.0)
    x_order = np.argsort(x, kind="stable")
    y_order = np.argsort(y, kind="stable")

    score = max(
        _characteristic_max(x, y, x_order, y_order, cells, clump_factor),
        _characteristic_max(y, x, y_order, x_order, cells, clump_factor),
    )
    return float(min(max(score, 0.0), 1.0))


def select_variables(
    d: Dataset,
    target: Optional[str] = None,
    threshold: float = DEFAULT_THRESHOLD,
    exponent: float = DEFAULT_EXPONENT,
    clump_factor: int = DEFAULT_CLUMP,
    workers: int = 1,
) -> SelectionReport:
    """
    Score every non-target variable against the target with MIC.

    Args:
        d: The dataset
        target: Power variable name (default: the dataset's power_watts variable)
        threshold: Keep variables with mic >= threshold
        exponent: MIC grid budget exponent
        clump_factor: MIC clump factor
        workers: Threads used to score variables in parallel

    Returns:
        SelectionReport sorted by descending MIC, ties by name

    Raises:
        InputValidationError: Target missing or not a power variable

    Examples:
        >>> select_variables(d, "power_w").selected
        ['cpu_user', 'disk_io_ms']
    """
    target = target or d.power_variable()
    if not d.has(target):
        raise InputValidationError(f"target variable {target!r} not in dataset")
    if d.descriptor(target).kind != VariableKind.POWER_WATTS:
        raise InputValidationError(f"target {target!r} is not a power_watts variable")
    threshold = validate_probability(threshold, "threshold")

    y = d.column(target)
    candidates = sorted(n for n in d.names if n != target)

    def score(name: str) -> MicScore:
        value = mic(d.column(name), y, exponent, clump_factor)
        logger.debug("mic(%s, %s) = %.6f", name, target, value)
        return MicScore(name, value)

    if workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, candidates))
    else:
        scores = [score(name) for name in candidates]

    scores.sort(key=lambda s: (-s.mic, s.variable))
    report = SelectionReport(target, tuple(scores), threshold)
    logger.info("selected %d of %d variables at threshold %.3f", len(report.selected), len(scores), threshold)
    return report


def ks_gaussian_test(values: Any) -> KsResult:
    """
    One-sample Kolmogorov-Smirnov test against a Gaussian with the sample's
    own mean and standard deviation.

    Delegates to ``scipy.stats.kstest`` with the asymptotic Kolmogorov
    distribution. With estimated parameters the p-value is conservative.

    Args:
        values: At least 8 finite values

    Returns:
        KsResult; a zero-spread sample yields statistic 1 and p-value 0

    Raises:
        InputValidationError: Fewer than 8 values

    Examples:
        >>> ks_gaussian_test(power).gaussian_rejected_at_5pct
        True
    """
    values = validate_vector(values, "values", min_length=8)
    n = values.shape[0]
    sd = float(np.std(values, ddof=1))
    if sd == 0.0:
        return KsResult(1.0, 0.0, n)

    result = stats.kstest(values, "norm", args=(float(np.mean(values)), sd), method="asymp")
    return KsResult(float(result.statistic), float(result.pvalue), n)


def selection_summary(report: SelectionReport) -> Dict[str, Any]:
    """Plain-dict view of a report (for manifests and logs)."""
    return {
        "target": report.target,
        "threshold": report.threshold,
        "selected": report.selected,
        "scores": {s.variable: s.mic for s in report.scores},
    }
