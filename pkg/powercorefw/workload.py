"""
File: powercorefw/workload.py
Synthetic workload schedule and the load generators that execute it.

A plan starts with single-factor phases (only one resource loaded at a
time) followed by all-to-all combinations of representative levels of every
resource. Each phase runs for two minutes by default.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import itertools
import multiprocessing
import os
import shutil
import socket
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any, List, Optional, Sequence, TextIO, Tuple

from .dataset import read_rows, write_rows
from .security import InputValidationError
from .utils import get_logger, monotonic_seconds

try:
    import psutil

    PSUTIL_AVAILABLE = True
except ImportError:
    PSUTIL_AVAILABLE = False

logger = get_logger(__name__)

PHASE_SECONDS = 120
CPU_STEP_PCT = 5
DISK_LEVELS = 17
IO_LEVELS = 10
COMBINATION_LEVELS = 3
DUTY_PERIOD_S = 0.1
BLOCK = 1024 * 1024
PAGE = 4096


@dataclass(frozen=True)
class Phase:
    """One step of a workload plan; zero means the resource is left idle."""

    name: str
    duration_s: float = PHASE_SECONDS
    cpu_target_pct: float = 0.0
    cpu_processes: int = 0
    memory_mb: int = 0
    disk_gb: int = 0
    io_processes: int = 0
    network: bool = False

    def __post_init__(self):
        if not self.duration_s > 0:
            raise InputValidationError(f"phase {self.name!r}: duration must be > 0, got {self.duration_s}")
        if not 0 <= self.cpu_target_pct <= 100:
            raise InputValidationError(
                f"phase {self.name!r}: cpu_target_pct must be in [0, 100], got {self.cpu_target_pct}"
            )
        for attr in ("cpu_processes", "memory_mb", "disk_gb", "io_processes"):
            if getattr(self, attr) < 0:
                raise InputValidationError(f"phase {self.name!r}: {attr} must be >= 0")

    def describe(self) -> str:
        parts = []
        if self.cpu_processes and self.cpu_target_pct:
            parts.append(f"cpu {self.cpu_target_pct:g}% x{self.cpu_processes}")
        if self.memory_mb:
            parts.append(f"mem {self.memory_mb} MB")
        if self.disk_gb:
            parts.append(f"disk {self.disk_gb} GB")
        if self.io_processes:
            parts.append(f"io x{self.io_processes}")
        if self.network:
            parts.append("net")
        return ", ".join(parts) or "idle"


PHASE_FIELDS = tuple(f for f in Phase.__dataclass_fields__)


@dataclass(frozen=True)
class WorkloadPlan:
    phases: Tuple[Phase, ...]

    @property
    def total_seconds(self) -> float:
        return float(sum(p.duration_s for p in self.phases))

    def __len__(self) -> int:
        return len(self.phases)

    def with_duration(self, seconds: float) -> "WorkloadPlan":
        """Same schedule with every phase lasting ``seconds``."""
        return WorkloadPlan(tuple(replace(p, duration_s=seconds) for p in self.phases))


def cpu_levels(n_cpu: int) -> List[Tuple[int, int]]:
    """(utilization %, processes) pairs: 0..100 by 5 crossed with 2i - 1."""
    processes = [2 * i - 1 for i in range(1, n_cpu + 1)]
    return [(pct, p) for p in processes for pct in range(0, 101, CPU_STEP_PCT)]


def memory_levels(memory_mb: int) -> List[int]:
    """256 (i + 1) MB for 1 <= i <= memory / 256 - 1."""
    return [256 * (i + 1) for i in range(1, memory_mb // 256)]


def disk_levels() -> List[int]:
    """2i - 1 GB for 1 <= i <= 17."""
    return [2 * i - 1 for i in range(1, DISK_LEVELS + 1)]


def io_levels() -> List[int]:
    """10i processes for 1 <= i <= 10."""
    return [10 * i for i in range(1, IO_LEVELS + 1)]


def _spread(levels: Sequence[Any], count: int) -> List[Any]:
    """First, last and evenly spaced interior levels, without duplicates."""
    if len(levels) <= count:
        return list(levels)
    if count == 1:
        return [levels[-1]]
    picks = sorted({round(i * (len(levels) - 1) / (count - 1)) for i in range(count)})
    return [levels[i] for i in picks]


def generate_workload_plan(
    n_cpu: int,
    memory_mb: int,
    phase_seconds: float = PHASE_SECONDS,
    combination_levels: int = COMBINATION_LEVELS,
) -> WorkloadPlan:
    """
    Build the synthetic workload schedule.

    Single-factor phases come first: every CPU (utilization, process count)
    pair, every memory level, every disk level, every I/O level and one
    network phase. Then the all-to-all combinations of ``combination_levels``
    spread levels of CPU, memory, disk and I/O, each with network off and on.

    Args:
        n_cpu: Processors of the machine
        memory_mb: Physical memory size in MB
        phase_seconds: Duration of every phase
        combination_levels: Levels per resource in the combination phases

    Returns:
        WorkloadPlan with
        21 n_cpu + (memory_mb // 256 - 1) + 17 + 10 + 1 single-factor phases
        and prod(min(levels, combination_levels)) * 2 combination phases

    Raises:
        InputValidationError: n_cpu < 1 or memory_mb < 512

    Examples:
        >>> sorted({p.cpu_processes for p in generate_workload_plan(4, 4096).phases if p.name.startswith("cpu")})
        [1, 3, 5, 7]
    """
    if n_cpu < 1:
        raise InputValidationError(f"n_cpu must be >= 1, got {n_cpu}")
    if memory_mb < 512:
        raise InputValidationError(f"memory_mb must be >= 512, got {memory_mb}")
    if combination_levels < 1:
        raise InputValidationError("combination_levels must be >= 1")

    cpu = cpu_levels(n_cpu)
    memory = memory_levels(memory_mb)
    disk = disk_levels()
    io = io_levels()

    phases: List[Phase] = []
    for pct, procs in cpu:
        phases.append(Phase(f"cpu-{pct}pct-{procs}p", phase_seconds, pct, procs))
    for mb in memory:
        phases.append(Phase(f"mem-{mb}mb", phase_seconds, memory_mb=mb))
    for gb in disk:
        phases.append(Phase(f"disk-{gb}gb", phase_seconds, disk_gb=gb))
    for procs in io:
        phases.append(Phase(f"io-{procs}p", phase_seconds, io_processes=procs))
    phases.append(Phase("net-on", phase_seconds, network=True))

    grid = itertools.product(
        _spread(cpu, combination_levels),
        _spread(memory, combination_levels),
        _spread(disk, combination_levels),
        _spread(io, combination_levels),
        (False, True),
    )
    for (pct, procs), mb, gb, io_procs, net in grid:
        phases.append(
            Phase(
                f"mix-{pct}pct-{procs}p-{mb}mb-{gb}gb-{io_procs}io-{'net' if net else 'nonet'}",
                phase_seconds, pct, procs, mb, gb, io_procs, net,
            )
        )
    plan = WorkloadPlan(tuple(phases))
    logger.info("workload plan: %d phases, %.1f h", len(plan), plan.total_seconds / 3600.0)
    return plan


def write_plan(plan: WorkloadPlan, path: Any) -> None:
    write_rows(path, PHASE_FIELDS, [[getattr(p, f) for f in PHASE_FIELDS] for p in plan.phases])


def read_plan(path: Any) -> WorkloadPlan:
    """
    Load a plan table written by ``write_plan``.

    Raises:
        InputValidationError: Wrong header or malformed cells
    """
    header, rows = read_rows(path)
    if tuple(header) != PHASE_FIELDS:
        raise InputValidationError(f"not a workload plan: header {header}")
    phases = []
    for line_number, r in enumerate(rows, start=2):
        try:
            phases.append(
                Phase(
                    r[0], float(r[1]), float(r[2]), int(r[3]), int(r[4]), int(r[5]), int(r[6]),
                    r[7].strip().lower() in ("true", "1"),
                )
            )
        except (IndexError, ValueError) as e:
            raise InputValidationError(f"line {line_number}: malformed phase ({e})")
    return WorkloadPlan(tuple(phases))


# load generators; each runs in its own process until ``stop`` is set

def cpu_worker(pct: float, stop: Any, period: float = DUTY_PERIOD_S) -> None:
    """Spin for pct% of every period and sleep the rest."""
    busy = period * pct / 100.0
    while not stop.is_set():
        start = time.perf_counter()
        while time.perf_counter() - start < busy:
            pass
        idle = period - (time.perf_counter() - start)
        if idle > 0:
            stop.wait(idle)


def memory_worker(mb: int, stop: Any) -> None:
    """Allocate ``mb`` MB and touch every page, then hold it."""
    block = bytearray(mb * BLOCK)
    for i in range(0, len(block), PAGE):
        block[i] = 1
    stop.wait()
    del block


def disk_worker(gb: int, path: str, stop: Any) -> None:
    """Sequentially write ``gb`` GB, then remove the file."""
    chunk = b"\0" * BLOCK
    try:
        with open(path, "wb") as f:
            for _ in range(gb * 1024):
                if stop.is_set():
                    break
                f.write(chunk)
            f.flush()
            os.fsync(f.fileno())
        stop.wait()
    finally:
        if os.path.exists(path):
            os.remove(path)


def io_worker(path: str, stop: Any, mb: int = 16) -> None:
    """Copy a buffer between memory and disk until stopped."""
    data = os.urandom(mb * BLOCK)
    try:
        while not stop.is_set():
            with open(path, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            with open(path, "rb") as f:
                data = f.read()
    finally:
        if os.path.exists(path):
            os.remove(path)


def network_worker(stop: Any) -> None:
    """Bulk transfer over loopback until stopped."""
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.bind(("127.0.0.1", 0))
    server.listen(1)
    port = server.getsockname()[1]

    def sink() -> None:
        conn, _ = server.accept()
        with conn:
            while conn.recv(BLOCK):
                pass

    receiver = threading.Thread(target=sink, daemon=True)
    receiver.start()
    payload = b"\0" * BLOCK
    with socket.create_connection(("127.0.0.1", port)) as client:
        while not stop.is_set():
            client.sendall(payload)
    receiver.join(timeout=1.0)
    server.close()


def available_memory_mb() -> Optional[int]:
    if PSUTIL_AVAILABLE:
        return int(psutil.virtual_memory().available // BLOCK)
    try:
        return int(os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE") // BLOCK)
    except (ValueError, OSError, AttributeError):
        return None


def cpu_percent(interval: float) -> Optional[float]:
    """
    System-wide CPU utilization over ``interval`` seconds, or None when
    psutil is not installed.
    """
    if not PSUTIL_AVAILABLE:
        return None
    return float(psutil.cpu_percent(interval=interval))


@dataclass(frozen=True)
class RunResult:
    executed: Tuple[str, ...] = ()
    skipped: Tuple[str, ...] = ()
    warnings: Tuple[str, ...] = field(default=())
    seconds: float = 0.0


def _resource_problem(phase: Phase, workdir: str) -> Optional[str]:
    if phase.memory_mb:
        free = available_memory_mb()
        if free is not None and phase.memory_mb > free:
            return f"needs {phase.memory_mb} MB of memory, {free} MB available"
    if phase.disk_gb:
        free_gb = shutil.disk_usage(workdir).free / (1024 ** 3)
        if phase.disk_gb > free_gb:
            return f"needs {phase.disk_gb} GB of disk in {workdir}, {free_gb:.1f} GB free"
    return None


def _start(ctx: Any, target: Any, *args: Any) -> Any:
    proc = ctx.Process(target=target, args=args, daemon=True)
    proc.start()
    return proc


def run_phase(phase: Phase, workdir: str, ctx: Any = None) -> float:
    """Run the load generators of one phase for its duration; returns seconds."""
    ctx = ctx or multiprocessing.get_context()
    stop = ctx.Event()
    procs = []
    started = monotonic_seconds()
    try:
        if phase.cpu_target_pct > 0:
            for _ in range(phase.cpu_processes):
                procs.append(_start(ctx, cpu_worker, phase.cpu_target_pct, stop))
        if phase.memory_mb:
            procs.append(_start(ctx, memory_worker, phase.memory_mb, stop))
        if phase.disk_gb:
            procs.append(_start(ctx, disk_worker, phase.disk_gb, os.path.join(workdir, "disk.bin"), stop))
        for i in range(phase.io_processes):
            procs.append(_start(ctx, io_worker, os.path.join(workdir, f"io-{i}.bin"), stop))
        if phase.network:
            procs.append(_start(ctx, network_worker, stop))
        remaining = phase.duration_s - (monotonic_seconds() - started)
        if remaining > 0 and phase.cpu_target_pct > 0:
            measured = cpu_percent(min(1.0, remaining))
            if measured is not None:
                logger.debug("phase %s: cpu %.1f%% (target %g%%)", phase.name, measured, phase.cpu_target_pct)
            remaining = phase.duration_s - (monotonic_seconds() - started)
        if remaining > 0:
            time.sleep(remaining)
    finally:
        stop.set()
        for p in procs:
            p.join(timeout=5.0)
            if p.is_alive():
                p.terminate()
                p.join()
    return monotonic_seconds() - started


def print_schedule(plan: WorkloadPlan, out: TextIO) -> None:
    elapsed = 0.0
    for i, phase in enumerate(plan.phases, start=1):
        out.write(f"{i:4d} {elapsed:9.0f}s {phase.duration_s:6.0f}s {phase.name}: {phase.describe()}\n")
        elapsed += phase.duration_s
    out.write(f"total {len(plan)} phases, {plan.total_seconds:.0f} s\n")


def run_workload(
    plan: WorkloadPlan,
    dry_run: bool = False,
    out: Optional[TextIO] = None,
    workdir: Optional[str] = None,
) -> RunResult:
    """
    Execute a plan phase by phase.

    A phase that needs more memory or disk than is available is skipped
    with a recorded warning. With ``dry_run`` the schedule is printed and
    nothing runs.

    Args:
        plan: The schedule
        dry_run: Only print the schedule
        out: Destination of the printed schedule (default: stdout)
        workdir: Directory for disk and I/O files (default: a temporary one)

    Returns:
        RunResult
    """
    if dry_run:
        print_schedule(plan, out or sys.stdout)
        return RunResult()

    owned = workdir is None
    workdir = workdir or tempfile.mkdtemp(prefix="powercorefw-")
    executed: List[str] = []
    skipped: List[str] = []
    warnings: List[str] = []
    started = monotonic_seconds()
    try:
        for phase in plan.phases:
            problem = _resource_problem(phase, workdir)
            if problem:
                message = f"phase {phase.name} skipped: {problem}"
                logger.warning(message)
                warnings.append(message)
                skipped.append(phase.name)
                continue
            logger.info("phase %s (%s) for %g s", phase.name, phase.describe(), phase.duration_s)
            run_phase(phase, workdir)
            executed.append(phase.name)
    finally:
        if owned:
            shutil.rmtree(workdir, ignore_errors=True)
    return RunResult(tuple(executed), tuple(skipped), tuple(warnings), monotonic_seconds() - started)


def plan_summary(plan: WorkloadPlan) -> dict:
    """Phase counts per family, for reports."""
    counts: dict = {}
    for p in plan.phases:
        family = p.name.split("-", 1)[0]
        counts[family] = counts.get(family, 0) + 1
    return {"phases": len(plan), "seconds": plan.total_seconds, "families": counts}
