"""
File: powercorefw/collector.py
Counter sampling, power stream ingest and stream alignment.

The sampling agent reads resource counters from /proc at a fixed cadence
while a power meter stream delivers ``<epoch_ms> <watts>`` lines. Both are
aligned into a Dataset by ``merge_streams``: one row per counter interval,
holding the counter deltas over the interval and the mean of the power
readings that fall inside it.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import collections
import math
import os
import socket
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import CANONICAL_COUNTERS, POWER_COLUMN, Dataset, descriptors_from_names
from .security import CollectorError, ReplayRequiredError, StreamFormatError
from .utils import get_logger, now

logger = get_logger(__name__)

DEFAULT_CADENCE_MS = 1000
DEFAULT_BUFFER = 4096
PROC_ROOT_ENV = "POWERCOREFW_PROC_ROOT"
TCP_PREFIX = "tcp://"

_CUMULATIVE = {c.name for c in CANONICAL_COUNTERS if c.cumulative}

_STAT_CPU_FIELDS = ("cpu_user", "cpu_nice", "cpu_system", "cpu_idle", "cpu_iowait", "cpu_irq", "cpu_softirq")
_STAT_KEYS = {
    "intr": "interrupts",
    "ctxt": "context_switches",
    "processes": "processes_forked",
    "procs_running": "procs_running",
    "procs_blocked": "procs_blocked",
}
_MEMINFO_KEYS = {
    "MemTotal": "mem_total_kb",
    "MemFree": "mem_free_kb",
    "Cached": "mem_cached_kb",
    "Buffers": "mem_buffers_kb",
}
_VMSTAT_KEYS = {
    "pgfault": "page_faults",
    "pgmajfault": "major_page_faults",
    "pgpgin": "pages_in",
    "pgpgout": "pages_out",
}
# field positions in a /proc/diskstats line
_DISK_FIELDS = {
    "disk_reads": 3,
    "disk_sectors_read": 5,
    "disk_writes": 7,
    "disk_sectors_written": 9,
    "disk_io_ms": 12,
}
# field positions after "iface:" in /proc/net/dev
_NET_FIELDS = {"net_rx_bytes": 0, "net_rx_packets": 1, "net_tx_bytes": 8, "net_tx_packets": 9}


@dataclass(frozen=True)
class CounterSnapshot:
    """
    Raw counter values at one instant. A counter the host does not expose
    maps to None.
    """

    timestamp: int
    values: Dict[str, Optional[float]]

    def get(self, name: str) -> Optional[float]:
        return self.values.get(name)

    def present(self) -> List[str]:
        return [n for n, v in self.values.items() if v is not None]


@dataclass(frozen=True)
class PowerReading:
    timestamp: int
    watts: float

    def __post_init__(self):
        if not math.isfinite(self.watts) or self.watts < 0:
            raise StreamFormatError(f"watts must be finite and non-negative, got {self.watts}")


def proc_root(root: Optional[str] = None) -> str:
    return root or os.environ.get(PROC_ROOT_ENV) or "/proc"


def _read(root: str, name: str) -> Optional[str]:
    try:
        with open(os.path.join(root, name), "r", encoding="ascii", errors="replace") as f:
            return f.read()
    except OSError:
        return None


def parse_stat(text: str) -> Dict[str, float]:
    """Aggregate CPU jiffies and system counters from /proc/stat."""
    out: Dict[str, float] = {}
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "cpu":
            for name, raw in zip(_STAT_CPU_FIELDS, parts[1:]):
                out[name] = float(raw)
        elif parts[0] in _STAT_KEYS and len(parts) > 1:
            out[_STAT_KEYS[parts[0]]] = float(parts[1])
    return out


def parse_meminfo(text: str) -> Dict[str, float]:
    out: Dict[str, float] = {}
    for line in text.splitlines():
        key, _, rest = line.partition(":")
        if key in _MEMINFO_KEYS and rest.split():
            out[_MEMINFO_KEYS[key]] = float(rest.split()[0])
    return out


def parse_vmstat(text: str) -> Dict[str, float]:
    out: Dict[str, float] = {}
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 2 and parts[0] in _VMSTAT_KEYS:
            out[_VMSTAT_KEYS[parts[0]]] = float(parts[1])
    return out


def parse_diskstats(text: str) -> Dict[str, float]:
    """
    Sum I/O counters over whole block devices.

    Partitions (a device whose name extends another listed name, e.g. sda1
    of sda) and loop/ram devices are skipped so nothing is counted twice.
    """
    rows = [line.split() for line in text.splitlines()]
    rows = [r for r in rows if len(r) >= 14]
    names = [r[2] for r in rows]
    out = {name: 0.0 for name in _DISK_FIELDS}
    for r in rows:
        dev = r[2]
        if dev.startswith(("loop", "ram")):
            continue
        if any(other != dev and dev.startswith(other) for other in names):
            continue
        for name, pos in _DISK_FIELDS.items():
            out[name] += float(r[pos])
    return out if rows else {}


def parse_net_dev(text: str) -> Dict[str, float]:
    """Sum traffic counters over every interface, loopback included."""
    out = {name: 0.0 for name in _NET_FIELDS}
    seen = False
    for line in text.splitlines():
        if ":" not in line:
            continue
        _, _, rest = line.partition(":")
        fields = rest.split()
        if len(fields) < 16:
            continue
        seen = True
        for name, pos in _NET_FIELDS.items():
            out[name] += float(fields[pos])
    return out if seen else {}


_SOURCES: Tuple[Tuple[str, Callable[[str], Dict[str, float]]], ...] = (
    ("stat", parse_stat),
    ("meminfo", parse_meminfo),
    ("vmstat", parse_vmstat),
    ("diskstats", parse_diskstats),
    ("net/dev", parse_net_dev),
)


def sample_counters(root: Optional[str] = None, clock: Callable[[], int] = now) -> CounterSnapshot:
    """
    Read one snapshot of the canonical counter set.

    Args:
        root: Process-information mount (default: $POWERCOREFW_PROC_ROOT or /proc)
        clock: Millisecond timestamp source

    Returns:
        CounterSnapshot; counters the host does not expose are None

    Raises:
        ReplayRequiredError: No readable stat file under ``root``

    Examples:
        >>> sample_counters("tests/fixtures/proc").get("context_switches")
        287654.0
    """
    root = proc_root(root)
    timestamp = clock()
    values: Dict[str, Optional[float]] = {c.name: None for c in CANONICAL_COUNTERS}
    for name, parser in _SOURCES:
        text = _read(root, name)
        if text is None:
            if name == "stat":
                raise ReplayRequiredError(
                    f"cannot read {os.path.join(root, 'stat')}; live sampling needs Linux /proc, "
                    "use replay mode (--replay) with recorded counters instead"
                )
            logger.debug("%s unavailable under %s", name, root)
            continue
        try:
            parsed = parser(text)
        except ValueError as e:
            raise CollectorError(f"cannot parse {name}: {e}")
        for key, value in parsed.items():
            if key in values:
                values[key] = value
    return CounterSnapshot(int(timestamp), values)


def counter_resets(previous: CounterSnapshot, current: CounterSnapshot) -> List[str]:
    """Cumulative counters that decreased between two snapshots."""
    flagged = []
    for name in _CUMULATIVE:
        a, b = previous.get(name), current.get(name)
        if a is not None and b is not None and b < a:
            flagged.append(name)
    return sorted(flagged)


def parse_power_line(line: str, line_number: int) -> Optional[PowerReading]:
    """
    Parse one ``<epoch_ms> <watts>`` line; blank lines yield None.

    Raises:
        StreamFormatError: Malformed line or negative watts
    """
    parts = line.split()
    if not parts:
        return None
    if len(parts) != 2:
        raise StreamFormatError(f"expected '<epoch_ms> <watts>', got {line.strip()!r}", line_number)
    try:
        timestamp = int(parts[0])
        watts = float(parts[1])
    except ValueError:
        raise StreamFormatError(f"non-numeric field in {line.strip()!r}", line_number)
    if not math.isfinite(watts) or watts < 0:
        raise StreamFormatError(f"watts must be finite and non-negative, got {parts[1]}", line_number)
    return PowerReading(timestamp, watts)


def iter_power_stream(lines: Iterable[str]) -> Iterator[PowerReading]:
    """
    Parse a power stream lazily, rejecting out-of-order timestamps.

    Raises:
        StreamFormatError: With the 1-based line number of the bad line
    """
    last: Optional[int] = None
    for line_number, line in enumerate(lines, start=1):
        reading = parse_power_line(line, line_number)
        if reading is None:
            continue
        if last is not None and reading.timestamp < last:
            raise StreamFormatError(
                f"timestamp {reading.timestamp} precedes previous {last}", line_number
            )
        last = reading.timestamp
        yield reading


def _connect(address: str, timeout: Optional[float]) -> socket.socket:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise CollectorError(f"power source must be tcp://host:port, got {TCP_PREFIX}{address}")
    try:
        return socket.create_connection((host, int(port)), timeout=timeout)
    except OSError as e:
        raise CollectorError(f"cannot connect to power source {address}: {e}")


def _socket_lines(address: str, timeout: Optional[float]) -> Iterator[str]:
    conn = _connect(address, timeout)
    with conn, conn.makefile("r", encoding="ascii", newline="\n") as stream:
        for line in stream:
            yield line


def read_power_stream(source: Any, timeout: Optional[float] = None) -> List[PowerReading]:
    """
    Read a power stream from a file path, an open text stream or a live
    ``tcp://host:port`` socket (read until the peer closes).

    Args:
        source: Path, text stream, or tcp:// address
        timeout: Socket timeout in seconds

    Returns:
        Readings in stream order

    Raises:
        StreamFormatError: Malformed line, negative watts or out-of-order
            timestamp, with its line number
        CollectorError: Source cannot be opened

    Examples:
        >>> [r.watts for r in read_power_stream(io.StringIO("1000 50.5\\n1100 51.0\\n"))]
        [50.5, 51.0]
    """
    if hasattr(source, "read"):
        return list(iter_power_stream(source))
    source = str(source)
    if source.startswith(TCP_PREFIX):
        return list(iter_power_stream(_socket_lines(source[len(TCP_PREFIX):], timeout)))
    try:
        with open(source, "r", encoding="ascii") as f:
            return list(iter_power_stream(f))
    except FileNotFoundError:
        raise CollectorError(f"power stream not found: {source}")


def write_power_stream(readings: Iterable[PowerReading], stream: Any) -> None:
    for r in readings:
        stream.write(f"{r.timestamp} {r.watts!r}\n")


@dataclass(frozen=True)
class MergeResult:
    """Aligned dataset plus the bookkeeping of what was dropped."""

    dataset: Dataset
    gap_count: int
    intervals: int
    warnings: Tuple[str, ...] = field(default=())


def merge_streams(
    counters: Sequence[CounterSnapshot],
    power: Sequence[PowerReading],
    names: Optional[Sequence[str]] = None,
    rates: bool = False,
    label: Optional[str] = None,
) -> MergeResult:
    """
    Align counter snapshots and power readings into a Dataset.

    Every pair of consecutive snapshots defines an interval [t_i, t_(i+1)).
    Cumulative counters contribute their delta over the interval (per second
    when ``rates``), gauges their value at t_i, and ``power_w`` is the mean of
    the readings timestamped inside the interval. Intervals overlapping the
    power stream but holding no reading are dropped and counted as gaps, so
    rows + gap_count equals the intervals in the overlap. A cumulative
    counter that decreases is treated as reset to zero: its delta is the new
    value and a warning is recorded.

    Args:
        counters: Snapshots in timestamp order
        power: Readings in timestamp order
        names: Counters to keep (default: every canonical counter present in
            all snapshots)
        rates: Divide cumulative deltas by the interval length in seconds
        label: Dataset label

    Returns:
        MergeResult

    Raises:
        CollectorError: Fewer than 2 snapshots, unordered snapshots, or no
            overlap between the two streams

    Examples:
        >>> merge_streams(snapshots, readings).dataset.n_rows   # 2 min, 1 s / 100 ms
        120
    """
    if len(counters) < 2:
        raise CollectorError("need at least 2 counter snapshots to form an interval")
    if not power:
        raise CollectorError("power stream is empty")
    stamps = np.array([s.timestamp for s in counters], dtype=np.int64)
    if np.any(np.diff(stamps) <= 0):
        raise CollectorError("counter snapshots must have strictly increasing timestamps")

    warnings: List[str] = []
    if names is None:
        names = [c.name for c in CANONICAL_COUNTERS if all(s.get(c.name) is not None for s in counters)]
        absent = [c.name for c in CANONICAL_COUNTERS if c.name not in names]
        if absent:
            message = f"counters absent from at least one snapshot, left out: {absent}"
            logger.warning(message)
            warnings.append(message)
        unknown = sorted({n for s in counters for n in s.present()} - {c.name for c in CANONICAL_COUNTERS})
        if unknown:
            message = f"non-canonical columns left out (pass names= to keep them): {unknown}"
            logger.warning(message)
            warnings.append(message)
    names = list(names)
    for name in names:
        if any(s.get(name) is None for s in counters):
            raise CollectorError(f"counter {name!r} is absent from at least one snapshot")

    raw = np.array([[s.get(n) for n in names] for s in counters], dtype=np.float64)
    p_ts = np.array([r.timestamp for r in power], dtype=np.int64)
    p_w = np.array([r.watts for r in power], dtype=np.float64)
    first, last = p_ts[0], p_ts[-1]

    starts, ends = stamps[:-1], stamps[1:]
    overlapping = (starts <= last) & (ends > first)
    if not overlapping.any():
        raise CollectorError(
            f"no overlap between counters [{stamps[0]}, {stamps[-1]}) and power [{first}, {last}]"
        )

    lo = np.searchsorted(p_ts, starts, side="left")
    hi = np.searchsorted(p_ts, ends, side="left")
    cumulative = np.array([n in _CUMULATIVE for n in names], dtype=bool)

    rows: List[List[float]] = []
    row_stamps: List[int] = []
    gaps = 0
    for i in np.flatnonzero(overlapping):
        if hi[i] == lo[i]:
            gaps += 1
            continue
        delta = raw[i + 1] - raw[i]
        reset = cumulative & (delta < 0)
        if reset.any():
            for j in np.flatnonzero(reset):
                message = f"counter {names[j]!r} reset at {int(ends[i])} ms"
                logger.warning(message)
                warnings.append(message)
            delta = np.where(reset, raw[i + 1], delta)
        if rates:
            delta = delta / ((ends[i] - starts[i]) / 1000.0)
        values = np.where(cumulative, delta, raw[i])
        rows.append(list(values) + [float(np.mean(p_w[lo[i]:hi[i]]))])
        row_stamps.append(int(starts[i]))

    if gaps:
        logger.warning("dropped %d counter intervals without power readings", gaps)
    if not rows:
        raise CollectorError("every overlapping interval lacks power readings")

    descriptors = descriptors_from_names(names + [POWER_COLUMN])
    dataset = Dataset(descriptors, np.array(rows, dtype=np.float64), row_stamps, label)
    return MergeResult(dataset, gaps, int(overlapping.sum()), tuple(warnings))


def snapshots_from_dataset(d: Dataset) -> List[CounterSnapshot]:
    """
    Recorded counters (tabular format with ts_ms) back into snapshots.

    Raises:
        CollectorError: The table has no timestamps
    """
    if d.timestamps is None:
        raise CollectorError("recorded counters need a ts_ms column")
    return [
        CounterSnapshot(int(t), {n: float(v) for n, v in zip(d.names, row)})
        for t, row in zip(d.timestamps, d.values)
    ]


def snapshots_to_dataset(snapshots: Sequence[CounterSnapshot], label: Optional[str] = None) -> Dataset:
    """Record snapshots in the tabular format; absent counters are left out."""
    if not snapshots:
        raise CollectorError("no snapshots to record")
    names = [c.name for c in CANONICAL_COUNTERS if all(s.get(c.name) is not None for s in snapshots)]
    values = [[s.get(n) for n in names] for s in snapshots]
    return Dataset(names, values, [s.timestamp for s in snapshots], label)


class Sampler(threading.Thread):
    """
    Background thread sampling counters at a fixed cadence into a bounded
    buffer. When the buffer is full the oldest snapshot is discarded and
    counted in ``dropped``; sampling never waits on a consumer.
    """

    def __init__(
        self,
        cadence_ms: int = DEFAULT_CADENCE_MS,
        root: Optional[str] = None,
        capacity: int = DEFAULT_BUFFER,
        clock: Callable[[], int] = now,
    ):
        super().__init__(name="powercorefw-sampler", daemon=True)
        if cadence_ms <= 0:
            raise CollectorError(f"cadence must be positive, got {cadence_ms} ms")
        self.cadence_ms = cadence_ms
        self.root = proc_root(root)
        self.clock = clock
        self.dropped = 0
        self.error: Optional[BaseException] = None
        self._buffer: Deque[CounterSnapshot] = collections.deque(maxlen=capacity)
        self._lock = threading.Lock()
        self._stop_event = threading.Event()

    def run(self) -> None:
        logger.info("sampling %s every %d ms", self.root, self.cadence_ms)
        next_due = self.clock()
        while not self._stop_event.is_set():
            try:
                snapshot = sample_counters(self.root, self.clock)
            except Exception as e:
                self.error = e
                logger.error("sampler stopped: %s", e)
                return
            with self._lock:
                if len(self._buffer) == self._buffer.maxlen:
                    self.dropped += 1
                self._buffer.append(snapshot)
            next_due += self.cadence_ms
            self._stop_event.wait(max(0.0, (next_due - self.clock()) / 1000.0))

    def stop(self, timeout: Optional[float] = None) -> None:
        self._stop_event.set()
        if self.is_alive():
            self.join(timeout)

    def drain(self) -> List[CounterSnapshot]:
        """Remove and return every buffered snapshot, oldest first."""
        with self._lock:
            items = list(self._buffer)
            self._buffer.clear()
        return items


class PowerReader(threading.Thread):
    """
    Background consumer of a power line stream into a bounded buffer.

    When ``connection`` is given, ``stop`` shuts that socket down so a read
    blocked on a silent meter returns, then closes it.
    """

    def __init__(
        self,
        lines: Iterable[str],
        capacity: int = DEFAULT_BUFFER * 16,
        connection: Optional[socket.socket] = None,
    ):
        super().__init__(name="powercorefw-power", daemon=True)
        self.lines = lines
        self.connection = connection
        self.dropped = 0
        self.error: Optional[BaseException] = None
        self._buffer: Deque[PowerReading] = collections.deque(maxlen=capacity)
        self._lock = threading.Lock()
        self._stop_event = threading.Event()

    def run(self) -> None:
        try:
            for reading in iter_power_stream(self.lines):
                if self._stop_event.is_set():
                    break
                with self._lock:
                    if len(self._buffer) == self._buffer.maxlen:
                        self.dropped += 1
                    self._buffer.append(reading)
        except Exception as e:
            if self._stop_event.is_set() and isinstance(e, (OSError, ValueError)):
                return  # connection torn down by stop()
            self.error = e
            logger.error("power reader stopped: %s", e)

    def stop(self, timeout: Optional[float] = None) -> None:
        """Stop reading, wait for the thread and close the connection."""
        self._stop_event.set()
        if self.connection is not None:
            try:
                self.connection.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self.is_alive():
            self.join(timeout)
        close = getattr(self.lines, "close", None)
        if callable(close):
            try:
                close()
            except (OSError, ValueError):
                pass
        if self.connection is not None:
            self.connection.close()
            logger.debug("power source connection closed")

    def drain(self) -> List[PowerReading]:
        with self._lock:
            items = list(self._buffer)
            self._buffer.clear()
        return items


def collect_live(
    power_source: str,
    duration_s: float,
    cadence_ms: int = DEFAULT_CADENCE_MS,
    root: Optional[str] = None,
    label: Optional[str] = None,
) -> MergeResult:
    """
    Sample counters and read a tcp:// power stream concurrently for
    ``duration_s`` seconds, then merge. Both threads are stopped and the
    power connection is closed before either buffer is drained.

    Raises:
        ReplayRequiredError: Host has no /proc
        CollectorError: Power source unreachable or either stream empty
    """
    sample_counters(root)  # fail fast without /proc
    if not power_source.startswith(TCP_PREFIX):
        raise CollectorError(f"live power source must be tcp://host:port, got {power_source}")
    sampler = Sampler(cadence_ms, root)
    conn = _connect(power_source[len(TCP_PREFIX):], None)
    reader = PowerReader(conn.makefile("r", encoding="ascii", newline="\n"), connection=conn)
    try:
        reader.start()
        sampler.start()
        threading.Event().wait(duration_s)
    finally:
        sampler.stop(timeout=cadence_ms / 1000.0 + 1.0)
        reader.stop(timeout=1.0)
    if sampler.error:
        raise CollectorError(f"counter sampling failed: {sampler.error}")
    if reader.error:
        raise CollectorError(f"power stream failed: {reader.error}")
    return merge_streams(sampler.drain(), reader.drain(), label=label)
