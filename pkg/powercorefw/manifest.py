"""
File: powercorefw/manifest.py
Append-only record of pipeline stage invocations.

Each stage appends one JSON line naming its inputs, outputs, parameters,
duration and the command line that ran it. An output file may be recorded
only once, so the manifest maps every artifact to the single invocation
that produced it, and `RunManifest.replay` can rebuild the artifacts by
re-running those command lines in order.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import json
import os
import threading
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .security import InputValidationError, PowerCoreError
from .utils import get_logger, now

logger = get_logger(__name__)


@dataclass(frozen=True)
class StageRecord:
    stage: str
    inputs: Tuple[str, ...] = ()
    outputs: Tuple[str, ...] = ()
    parameters: Dict[str, Any] = field(default_factory=dict)
    seconds: float = 0.0
    started_ms: int = 0
    argv: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["inputs"] = list(self.inputs)
        doc["outputs"] = list(self.outputs)
        doc["argv"] = list(self.argv)
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "StageRecord":
        return cls(
            doc["stage"],
            tuple(doc.get("inputs", ())),
            tuple(doc.get("outputs", ())),
            dict(doc.get("parameters", {})),
            float(doc.get("seconds", 0.0)),
            int(doc.get("started_ms", 0)),
            tuple(str(a) for a in doc.get("argv", ())),
        )


class RunManifest:
    """
    JSON-lines manifest bound to a file.

    Examples:
        >>> m = RunManifest("run.jsonl")
        >>> record = m.append("select", ["a1.csv"], ["sel.csv"], {"threshold": 0.1}, 0.8)
        >>> [r.stage for r in m.records()]
        ['select']
    """

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()

    def records(self) -> List[StageRecord]:
        if not os.path.exists(self.path):
            return []
        out = []
        with open(self.path, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    out.append(StageRecord.from_dict(json.loads(line)))
                except (ValueError, KeyError) as e:
                    raise InputValidationError(f"{self.path}: line {line_number}: malformed record ({e})")
        return out

    def outputs(self) -> List[str]:
        return [o for r in self.records() for o in r.outputs]

    def check_outputs(self, outputs: Sequence[str], stage: str = "stage") -> List[str]:
        """
        Normalize `outputs` and make sure none of them is recorded yet.

        Raises:
            InputValidationError: An output is already recorded, or listed twice
        """
        normalized = [os.path.normpath(o) for o in outputs]
        if len(set(normalized)) != len(normalized):
            raise InputValidationError(f"{stage} lists an output twice: {normalized}")
        seen = set(self.outputs())
        clash = [o for o in normalized if o in seen]
        if clash:
            raise InputValidationError(f"outputs already recorded in {self.path}: {clash}")
        return normalized

    def append(
        self,
        stage: str,
        inputs: Sequence[str] = (),
        outputs: Sequence[str] = (),
        parameters: Optional[Dict[str, Any]] = None,
        seconds: float = 0.0,
        started_ms: Optional[int] = None,
        argv: Sequence[str] = (),
    ) -> StageRecord:
        """
        Append one stage record.

        Raises:
            InputValidationError: An output is already recorded, or listed twice
        """
        with self._lock:
            normalized = self.check_outputs(outputs, f"stage {stage!r}")
            record = StageRecord(
                stage,
                tuple(os.path.normpath(i) for i in inputs),
                tuple(normalized),
                dict(parameters or {}),
                float(seconds),
                int(started_ms if started_ms is not None else now()),
                tuple(str(a) for a in argv),
            )
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record.to_dict(), sort_keys=True, default=str) + "\n")
        logger.debug("manifest %s: %s", self.path, stage)
        return record

    def replay(self, runner: Optional[Callable[[Sequence[str]], int]] = None) -> List[StageRecord]:
        """
        Re-run every recorded stage that wrote files, in recording order.

        Paths in the recorded command lines resolve against the current
        working directory. Stages without file outputs (predict to stdout,
        for instance) are skipped. The manifest itself is not appended to.

        Args:
            runner: Called with each command line; defaults to the CLI entry point

        Returns:
            The records that were re-run

        Raises:
            InputValidationError: A stage with outputs has no recorded command line
            PowerCoreError: A re-run stage exited nonzero
        """
        if runner is None:
            from .cli import main as runner
        replayed = []
        for record in self.records():
            if not record.outputs:
                logger.info("replay: skipping %s (no file outputs)", record.stage)
                continue
            if not record.argv:
                raise InputValidationError(f"{self.path}: {record.stage} record has no command line to replay")
            logger.info("replay: %s %s", record.stage, " ".join(record.argv))
            code = runner(list(record.argv))
            if code != 0:
                raise PowerCoreError(f"replay of {record.stage} exited {code}")
            replayed.append(record)
        return replayed
