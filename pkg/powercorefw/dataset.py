"""
File: powercorefw/dataset.py
Dataset model and tabular I/O for PowerCoreFW.

This module defines the named-column dataset every pipeline stage consumes,
the comma-delimited table format used as both ingest and emit format, the
architecture-indicator merge, descriptive statistics and min-max
normalization recipes.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .security import (
    DatasetError,
    InputValidationError,
    TableFormatError,
    validate_names,
)
from .types import is_identifier
from .utils import format_real, get_logger

logger = get_logger(__name__)

TIMESTAMP_COLUMN = "ts_ms"
POWER_COLUMN = "power_w"
ARCH_COLUMN = "ARCH"
MIX_LABEL = "Mix"
NORMALIZED_RANGE = (-0.9, 0.9)

_POWER_NAMES = ("power_w", "power", "watts")


class VariableKind(str, Enum):
    """Role of a column in a dataset."""

    COUNTER = "counter"
    ARCHITECTURE_INDICATOR = "architecture_indicator"
    POWER_WATTS = "power_watts"


@dataclass(frozen=True)
class VariableDescriptor:
    """A named column: counter, architecture indicator or measured watts."""

    name: str
    kind: VariableKind = VariableKind.COUNTER
    units: str = ""

    def __post_init__(self):
        if not is_identifier(self.name):
            raise InputValidationError(f"invalid variable name: {self.name!r}")
        object.__setattr__(self, "kind", VariableKind(self.kind))


@dataclass(frozen=True)
class CounterSpec:
    """Entry of the canonical counter set."""

    name: str
    units: str
    cumulative: bool
    group: str


# Stand-in for the unpublished 29-variable list: grouped the way the
# kernel exposes them under /proc. The schema stays open; any numeric
# column is accepted by load_table.
CANONICAL_COUNTERS: Tuple[CounterSpec, ...] = (
    CounterSpec("cpu_user", "jiffies", True, "cpu"),
    CounterSpec("cpu_nice", "jiffies", True, "cpu"),
    CounterSpec("cpu_system", "jiffies", True, "cpu"),
    CounterSpec("cpu_idle", "jiffies", True, "cpu"),
    CounterSpec("cpu_iowait", "jiffies", True, "cpu"),
    CounterSpec("cpu_irq", "jiffies", True, "cpu"),
    CounterSpec("cpu_softirq", "jiffies", True, "cpu"),
    CounterSpec("mem_total_kb", "kB", False, "memory"),
    CounterSpec("mem_free_kb", "kB", False, "memory"),
    CounterSpec("mem_cached_kb", "kB", False, "memory"),
    CounterSpec("mem_buffers_kb", "kB", False, "memory"),
    CounterSpec("page_faults", "faults", True, "memory"),
    CounterSpec("major_page_faults", "faults", True, "memory"),
    CounterSpec("pages_in", "pages", True, "memory"),
    CounterSpec("pages_out", "pages", True, "memory"),
    CounterSpec("disk_sectors_read", "sectors", True, "disk"),
    CounterSpec("disk_sectors_written", "sectors", True, "disk"),
    CounterSpec("disk_reads", "ops", True, "disk"),
    CounterSpec("disk_writes", "ops", True, "disk"),
    CounterSpec("disk_io_ms", "ms", True, "disk"),
    CounterSpec("net_rx_bytes", "bytes", True, "network"),
    CounterSpec("net_tx_bytes", "bytes", True, "network"),
    CounterSpec("net_rx_packets", "packets", True, "network"),
    CounterSpec("net_tx_packets", "packets", True, "network"),
    CounterSpec("interrupts", "count", True, "system"),
    CounterSpec("context_switches", "count", True, "system"),
    CounterSpec("processes_forked", "count", True, "system"),
    CounterSpec("procs_running", "count", False, "system"),
    CounterSpec("procs_blocked", "count", False, "system"),
)

CANONICAL_COUNTER_NAMES: Tuple[str, ...] = tuple(c.name for c in CANONICAL_COUNTERS)


def infer_kind(name: str) -> VariableKind:
    """
    Infer a variable kind from its column name.

    Examples:
        >>> infer_kind("power_w")
        <VariableKind.POWER_WATTS: 'power_watts'>
        >>> infer_kind("cpu_user")
        <VariableKind.COUNTER: 'counter'>
    """
    if name in _POWER_NAMES:
        return VariableKind.POWER_WATTS
    if name == ARCH_COLUMN:
        return VariableKind.ARCHITECTURE_INDICATOR
    return VariableKind.COUNTER


def descriptors_from_names(names: Sequence[str]) -> List[VariableDescriptor]:
    """Build descriptors for ``names`` with inferred kinds and canonical units."""
    units = {c.name: c.units for c in CANONICAL_COUNTERS}
    units[POWER_COLUMN] = "W"
    return [VariableDescriptor(n, infer_kind(n), units.get(n, "")) for n in names]


@dataclass(frozen=True)
class Sample:
    """One timestamped observation aligned with a dataset's variable list."""

    timestamp: int
    values: Tuple[float, ...]


class Dataset:
    """
    Immutable named-column matrix of samples.

    Values are stored as a read-only float64 matrix of shape
    (rows, variables); timestamps, when the source had a ``ts_ms`` column,
    as a read-only int64 vector. Construction validates rectangularity,
    finiteness and name uniqueness, so every later operation can assume a
    well-formed dataset.
    """

    def __init__(
        self,
        variables: Sequence[Union[VariableDescriptor, str]],
        values: Any,
        timestamps: Optional[Any] = None,
        label: Optional[str] = None,
    ):
        descriptors = [
            v if isinstance(v, VariableDescriptor) else descriptors_from_names([v])[0]
            for v in variables
        ]
        try:
            validate_names([d.name for d in descriptors], "variable names")
        except InputValidationError as e:
            raise DatasetError(str(e))

        try:
            matrix = np.array(values, dtype=np.float64)
        except (TypeError, ValueError):
            raise DatasetError("dataset values must be numeric and rectangular")
        if matrix.size == 0:
            matrix = matrix.reshape(0, len(descriptors))
        if matrix.ndim != 2 or matrix.shape[1] != len(descriptors):
            raise DatasetError(
                f"dataset is not rectangular: expected {len(descriptors)} columns, got shape {matrix.shape}"
            )
        if not np.all(np.isfinite(matrix)):
            bad_row = int(np.argwhere(~np.isfinite(matrix))[0][0])
            raise DatasetError(f"non-finite value in row {bad_row}")
        matrix.flags.writeable = False

        ts = None
        if timestamps is not None:
            ts = np.array(timestamps, dtype=np.int64)
            if ts.shape != (matrix.shape[0],):
                raise DatasetError(
                    f"timestamp count {ts.shape[0] if ts.ndim else 0} does not match row count {matrix.shape[0]}"
                )
            ts.flags.writeable = False

        self._variables: Tuple[VariableDescriptor, ...] = tuple(descriptors)
        self._index: Dict[str, int] = {d.name: i for i, d in enumerate(descriptors)}
        self._values = matrix
        self._timestamps = ts
        self.label = label

    @property
    def variables(self) -> Tuple[VariableDescriptor, ...]:
        return self._variables

    @property
    def names(self) -> List[str]:
        return [d.name for d in self._variables]

    @property
    def values(self) -> np.ndarray:
        """Read-only (rows, variables) matrix."""
        return self._values

    @property
    def timestamps(self) -> Optional[np.ndarray]:
        return self._timestamps

    @property
    def n_rows(self) -> int:
        return self._values.shape[0]

    def __len__(self) -> int:
        return self.n_rows

    def __repr__(self) -> str:
        return f"Dataset(label={self.label!r}, rows={self.n_rows}, variables={self.names})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        same_ts = (
            (self._timestamps is None and other._timestamps is None)
            or (
                self._timestamps is not None
                and other._timestamps is not None
                and np.array_equal(self._timestamps, other._timestamps)
            )
        )
        return (
            self._variables == other._variables
            and self.label == other.label
            and same_ts
            and np.array_equal(self._values, other._values)
        )

    @property
    def rows(self) -> List[Sample]:
        """Rows as Sample objects; timestamps default to the row index."""
        ts = self._timestamps if self._timestamps is not None else range(self.n_rows)
        return [Sample(int(t), tuple(float(v) for v in row)) for t, row in zip(ts, self._values)]

    def iter_rows(self) -> Iterator[np.ndarray]:
        return iter(self._values)

    def has(self, name: str) -> bool:
        return name in self._index

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise InputValidationError(f"unknown variable: {name!r}")

    def descriptor(self, name: str) -> VariableDescriptor:
        return self._variables[self.index_of(name)]

    def column(self, name: str) -> np.ndarray:
        """Return the (read-only) column for ``name``."""
        return self._values[:, self.index_of(name)]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Return a fresh (rows, len(names)) matrix of the requested columns."""
        idx = [self.index_of(n) for n in names]
        return np.array(self._values[:, idx], dtype=np.float64)

    def power_variable(self) -> str:
        """
        Return the name of the single power_watts variable.

        Raises:
            DatasetError: If there is none or more than one
        """
        power = [d.name for d in self._variables if d.kind == VariableKind.POWER_WATTS]
        if len(power) != 1:
            raise DatasetError(f"expected exactly one power_watts variable, found {power}")
        return power[0]

    def feature_names(self, target: Optional[str] = None) -> List[str]:
        """All variable names except the target (default: the power variable)."""
        target = target or self.power_variable()
        return [n for n in self.names if n != target]

    def take(self, indices: Any, label: Optional[str] = None) -> "Dataset":
        """Return the dataset restricted to the given row indices, in that order."""
        idx = np.asarray(indices, dtype=np.int64)
        ts = None if self._timestamps is None else self._timestamps[idx]
        return Dataset(self._variables, self._values[idx], ts, label if label is not None else self.label)

    def with_label(self, label: Optional[str]) -> "Dataset":
        return Dataset(self._variables, self._values, self._timestamps, label)


def load_table(
    path: Any,
    schema: Union[str, Sequence[VariableDescriptor]] = "infer-from-header",
    label: Optional[str] = None,
) -> Dataset:
    """
    Load a comma-delimited table into a Dataset.

    The first line is a header of variable names. A leading ``ts_ms`` column
    becomes the timestamp vector instead of a variable. Every other cell must
    be a finite decimal number (scientific notation allowed); rows keep file
    order.

    Args:
        path: File path, or an open text stream
        schema: Descriptors for the non-timestamp columns, or
            "infer-from-header" to infer kinds from the names
        label: Optional architecture label (e.g. "A1")

    Returns:
        The loaded Dataset

    Raises:
        TableFormatError: Malformed row (wrong arity, non-numeric cell), naming its line
        DatasetError: Missing file, empty file or duplicate column names

    Examples:
        >>> d = load_table("trace.csv")
        >>> d.names
        ['cpu_user', 'power_w']
    """
    if hasattr(path, "read"):
        return _read_table(path, schema, label)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return _read_table(f, schema, label)
    except FileNotFoundError:
        raise DatasetError(f"table not found: {path}")


def _read_table(stream: Any, schema: Any, label: Optional[str]) -> Dataset:
    reader = csv.reader(stream, delimiter=",")
    header = next(reader, None)
    if not header:
        raise TableFormatError("missing header", 1)
    header = [h.strip() for h in header]

    duplicates = sorted({h for h in header if header.count(h) > 1})
    if duplicates:
        raise DatasetError(f"duplicate column names: {duplicates}")

    has_ts = header[0] == TIMESTAMP_COLUMN
    names = header[1:] if has_ts else header

    if isinstance(schema, str):
        if schema != "infer-from-header":
            raise InputValidationError(f"unknown schema mode: {schema!r}")
        descriptors = descriptors_from_names(names)
    else:
        descriptors = list(schema)
        if [d.name for d in descriptors] != names:
            raise DatasetError(
                f"header {names} does not match schema {[d.name for d in descriptors]}"
            )

    timestamps: List[int] = []
    rows: List[List[float]] = []
    for line_number, cells in enumerate(reader, start=2):
        if not cells or (len(cells) == 1 and not cells[0].strip()):
            continue
        if len(cells) != len(header):
            raise TableFormatError(
                f"expected {len(header)} cells, got {len(cells)}", line_number
            )
        try:
            parsed = [float(c) for c in (cells[1:] if has_ts else cells)]
            if has_ts:
                timestamps.append(int(cells[0]))
        except ValueError:
            raise TableFormatError(f"non-numeric cell in {cells!r}", line_number)
        if not all(math.isfinite(v) for v in parsed):
            raise TableFormatError("missing or non-finite value", line_number)
        rows.append(parsed)

    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    logger.debug("loaded %d rows x %d variables", len(rows), len(names))
    return Dataset(descriptors, values, timestamps if has_ts else None, label)


def write_table(d: Dataset, path: Any) -> None:
    """
    Write a Dataset in the tabular format.

    Reals use the shortest round-trip decimal representation, so
    ``load_table(write_table(d))`` reproduces the values bit-exactly.

    Args:
        d: The dataset to write
        path: File path, or an open text stream
    """
    if hasattr(path, "write"):
        _write_table(d, path)
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        _write_table(d, f)


def _write_table(d: Dataset, stream: Any) -> None:
    writer = csv.writer(stream, delimiter=",", lineterminator="\n")
    has_ts = d.timestamps is not None
    writer.writerow(([TIMESTAMP_COLUMN] if has_ts else []) + d.names)
    for i, row in enumerate(d.values):
        cells = [format_real(v) for v in row]
        if has_ts:
            cells.insert(0, str(int(d.timestamps[i])))
        writer.writerow(cells)


def table_to_string(d: Dataset) -> str:
    """Serialize a Dataset to the tabular format in memory."""
    buf = io.StringIO()
    _write_table(d, buf)
    return buf.getvalue()


def write_rows(path: Any, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """
    Write a free-form table (reports, traces) in the same comma-delimited format.

    Floats are written with round-trip precision; other cells with ``str``.
    """
    def cell(v: Any) -> str:
        if isinstance(v, (float, np.floating)):
            return format_real(v)
        return str(v)

    def emit(stream: Any) -> None:
        writer = csv.writer(stream, delimiter=",", lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([cell(v) for v in row])

    if hasattr(path, "write"):
        emit(path)
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        emit(f)


def read_rows(path: Any) -> Tuple[List[str], List[List[str]]]:
    """Read a free-form table; returns (header, rows of raw cells)."""
    def parse(stream: Any) -> Tuple[List[str], List[List[str]]]:
        reader = csv.reader(stream, delimiter=",")
        header = next(reader, None)
        if not header:
            raise TableFormatError("missing header", 1)
        return [h.strip() for h in header], [r for r in reader if r]

    if hasattr(path, "read"):
        return parse(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return parse(f)
    except FileNotFoundError:
        raise DatasetError(f"table not found: {path}")


def merge_with_arch_indicator(a: Dataset, b: Dataset) -> Dataset:
    """
    Concatenate two architectures' datasets and append the ARCH indicator.

    Rows from ``a`` get ARCH = -1 and rows from ``b`` get ARCH = +1, by
    provenance, even when ``a`` and ``b`` are the same dataset.

    Raises:
        DatasetError: If the variable lists differ (lists the symmetric difference)

    Examples:
        >>> merge_with_arch_indicator(a1, a2).label
        'Mix'
    """
    if a.variables != b.variables:
        left = {(v.name, v.kind.value) for v in a.variables}
        right = {(v.name, v.kind.value) for v in b.variables}
        diff = sorted(left.symmetric_difference(right))
        if not diff:
            diff = ["column order differs"]
        raise DatasetError(f"variable lists differ: {diff}")
    if a.has(ARCH_COLUMN):
        raise DatasetError(f"dataset already has an {ARCH_COLUMN} column")

    arch = np.concatenate([np.full(a.n_rows, -1.0), np.full(b.n_rows, 1.0)])
    values = np.column_stack([np.vstack([a.values, b.values]), arch])

    variables = list(a.variables)
    variables.append(VariableDescriptor(ARCH_COLUMN, VariableKind.ARCHITECTURE_INDICATOR, "indicator"))

    ts = None
    if a.timestamps is not None and b.timestamps is not None:
        ts = np.concatenate([a.timestamps, b.timestamps])
    return Dataset(variables, values, ts, MIX_LABEL)


def describe(d: Dataset, variable: str) -> Dict[str, float]:
    """
    Descriptive statistics of one variable.

    Args:
        d: The dataset
        variable: Variable name

    Returns:
        dict with mean, sd (n-1 denominator), min, max and n

    Raises:
        InputValidationError: Unknown variable or fewer than 2 rows

    Examples:
        >>> describe(d, "power_w")["mean"]
        142.62
    """
    column = d.column(variable)
    n = column.shape[0]
    if n < 2:
        raise InputValidationError(f"describe needs at least 2 rows, got {n}")
    return {
        "mean": float(np.mean(column)),
        "sd": float(np.std(column, ddof=1)),
        "min": float(np.min(column)),
        "max": float(np.max(column)),
        "n": n,
    }


def describe_power(d: Dataset) -> Dict[str, float]:
    """Descriptive statistics of the dataset's power variable."""
    return describe(d, d.power_variable())


@dataclass(frozen=True)
class NormalizationRecipe:
    """
    Per-variable affine map ``y = low + (x - offset) * scale``.

    For a variable spanning [min, max] the offset is min and the scale is
    (high - low) / (max - min); a constant variable gets scale 1, so it maps
    to the lower bound and inverts back to the constant.
    """

    names: Tuple[str, ...]
    offsets: Tuple[float, ...]
    scales: Tuple[float, ...]
    low: float = NORMALIZED_RANGE[0]
    high: float = NORMALIZED_RANGE[1]
    _offsets_arr: np.ndarray = field(init=False, repr=False, compare=False)
    _scales_arr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (len(self.names) == len(self.offsets) == len(self.scales)):
            raise InputValidationError("recipe names, offsets and scales must align")
        if not self.low < self.high:
            raise InputValidationError(f"empty target range [{self.low}, {self.high}]")
        if any(s == 0 or not math.isfinite(s) for s in self.scales):
            raise InputValidationError("recipe scales must be finite and non-zero")
        object.__setattr__(self, "_offsets_arr", np.asarray(self.offsets, dtype=np.float64))
        object.__setattr__(self, "_scales_arr", np.asarray(self.scales, dtype=np.float64))

    def apply(self, x: Any) -> np.ndarray:
        """Map raw values (vector or rows x variables matrix) into the range."""
        x = np.asarray(x, dtype=np.float64)
        return self.low + (x - self._offsets_arr) * self._scales_arr

    def invert(self, y: Any) -> np.ndarray:
        """Map normalized values back to raw units."""
        y = np.asarray(y, dtype=np.float64)
        return (y - self.low) / self._scales_arr + self._offsets_arr

    def subset(self, names: Sequence[str]) -> "NormalizationRecipe":
        """Recipe restricted to (and reordered by) ``names``."""
        index = {n: i for i, n in enumerate(self.names)}
        try:
            idx = [index[n] for n in names]
        except KeyError as e:
            raise InputValidationError(f"recipe has no variable {e.args[0]!r}")
        return NormalizationRecipe(
            tuple(names),
            tuple(self.offsets[i] for i in idx),
            tuple(self.scales[i] for i in idx),
            self.low,
            self.high,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "names": list(self.names),
            "offsets": list(self.offsets),
            "scales": list(self.scales),
            "range": [self.low, self.high],
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "NormalizationRecipe":
        low, high = doc["range"]
        return cls(
            tuple(doc["names"]),
            tuple(float(v) for v in doc["offsets"]),
            tuple(float(v) for v in doc["scales"]),
            float(low),
            float(high),
        )


def fit_normalizer(
    d: Dataset,
    range: Tuple[float, float] = NORMALIZED_RANGE,
    names: Optional[Sequence[str]] = None,
) -> NormalizationRecipe:
    """
    Fit min-max normalization of each variable onto ``range``.

    Args:
        d: The dataset
        range: Closed target interval (low, high)
        names: Variables to include (default: all)

    Returns:
        An invertible NormalizationRecipe

    Raises:
        InputValidationError: Empty dataset or empty range

    Examples:
        >>> r = fit_normalizer(d, (-0.9, 0.9))
        >>> r.apply([5.0])   # column spanning [0, 10]
        array([0.])
    """
    if d.n_rows == 0:
        raise InputValidationError("cannot fit a normalizer on an empty dataset")
    low, high = float(range[0]), float(range[1])
    if not low < high:
        raise InputValidationError(f"empty target range [{low}, {high}]")

    names = list(names) if names is not None else d.names
    matrix = d.matrix(names)
    mins = matrix.min(axis=0)
    maxs = matrix.max(axis=0)
    offsets = []
    scales = []
    for lo, hi in zip(mins, maxs):
        offsets.append(float(lo))
        scales.append(float((high - low) / (hi - lo)) if hi > lo else 1.0)
    return NormalizationRecipe(tuple(names), tuple(offsets), tuple(scales), low, high)
