"""
File: powercorefw/cli.py
Command-line pipeline: collect, select, train, evaluate, choose, predict.

Every subcommand reads and writes the comma-delimited tabular format (model
files excepted) and exits 0 on success, 1 on a runtime failure and 2 on a
usage error.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import argparse
import logging
import os
import shlex
import sys
import threading
from typing import Any, Dict, List, Optional, Sequence, TextIO

from .collector import (
    DEFAULT_CADENCE_MS,
    collect_live,
    merge_streams,
    read_power_stream,
    snapshots_from_dataset,
)
from .dataset import (
    describe,
    load_table,
    merge_with_arch_indicator,
    read_rows,
    write_rows,
    write_table,
)
from .evaluation import (
    DEFAULT_FOLDS,
    cross_validate,
    rank_reports,
    read_report_summary,
    timing_report,
    write_report,
    write_trace,
)
from .manifest import RunManifest
from .mlp import DEFAULT_EPOCHS, REFERENCE_CHUNK_SIZE, MlpConfig, reference_configuration
from .models import MODEL_KINDS, fit_model, load_model, make_trainer, predict_row, save_model
from .ret import DEFAULT_ALPHA
from .security import AuditLogger, InputValidationError, PowerCoreError, UsageError
from .selection import (
    DEFAULT_CLUMP,
    DEFAULT_EXPONENT,
    DEFAULT_THRESHOLD,
    ks_gaussian_test,
    select_variables,
)
from .utils import format_real, get_logger, monotonic_seconds, now
from .workload import PHASE_SECONDS, generate_workload_plan, print_schedule, read_plan, run_workload

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


def _open_out(path: Optional[str]) -> Any:
    return sys.stdout if path in (None, "-") else path


def _feature_list(args: argparse.Namespace) -> Optional[List[str]]:
    """Features from --features (selection report) and/or repeated --feature."""
    names: List[str] = []
    if getattr(args, "features", None):
        header, rows = read_rows(args.features)
        if header[:3] != ["variable", "mic", "selected"]:
            raise UsageError(f"{args.features} is not a selection report")
        names.extend(r[0] for r in rows if r[2].strip() == "1")
        if not names:
            raise InputValidationError(f"{args.features} selects no variables")
    names.extend(getattr(args, "feature", None) or [])
    return names or None


def _mlp_config(args: argparse.Namespace, n_features: int) -> Optional[MlpConfig]:
    if args.reference_config:
        return reference_configuration(n_features, args.epochs or DEFAULT_EPOCHS, args.seed)
    if args.hidden_layers is None:
        return None
    return MlpConfig(
        args.hidden_layers,
        args.neurons or max(1, 2 * n_features),
        args.learning_rate,
        args.chunk_size,
        args.epochs or DEFAULT_EPOCHS,
        args.seed,
    )


def _trainer_params(args: argparse.Namespace, n_features: int) -> Dict[str, Any]:
    return {
        "alpha": args.alpha,
        "mlp_config": _mlp_config(args, n_features),
        "search_budget": args.search_budget,
        "epochs": args.epochs or DEFAULT_EPOCHS,
    }


def _record(args: argparse.Namespace, stage: str, inputs: Sequence[str], outputs: Sequence[str],
            parameters: Dict[str, Any], started: float, started_ms: int,
            stage_argv: Optional[Sequence[str]] = None) -> None:
    seconds = monotonic_seconds() - started
    if args.audit:
        args.audit.stage(stage, inputs, outputs, parameters)
    if args.manifest and stage_argv is not None:
        files = [o for o in outputs if o not in (None, "-")]
        RunManifest(args.manifest).append(stage, inputs, files, parameters, seconds, started_ms, stage_argv)


def cmd_collect(args: argparse.Namespace) -> int:
    plan = None
    if args.plan:
        if args.plan == "auto":
            memory_mb = _physical_memory_mb()
            plan = generate_workload_plan(os.cpu_count() or 1, memory_mb, args.phase_seconds)
        else:
            plan = read_plan(args.plan)
    if args.dry_run:
        if plan is None:
            raise UsageError("--dry-run needs --plan")
        print_schedule(plan, sys.stdout)
        return EXIT_OK
    if not args.power_source:
        raise UsageError("--power-source is required (file or tcp://host:port)")

    if args.replay:
        counters = snapshots_from_dataset(load_table(args.replay))
        result = merge_streams(counters, read_power_stream(args.power_source), rates=args.rates, label=args.label)
    else:
        duration = args.duration
        worker = None
        if plan is not None:
            duration = plan.total_seconds
            worker = threading.Thread(target=run_workload, args=(plan,), daemon=True)
            worker.start()
        if not duration:
            raise UsageError("live collection needs --duration or --plan")
        result = collect_live(args.power_source, duration, args.cadence_ms, label=args.label)
        if worker is not None:
            worker.join()

    write_table(result.dataset, _open_out(args.output))
    logger.info("collected %d rows, %d gaps", result.dataset.n_rows, result.gap_count)
    if result.gap_count:
        sys.stderr.write(f"dropped {result.gap_count} intervals without power readings\n")
    return EXIT_OK


def _physical_memory_mb() -> int:
    try:
        return int(os.sysconf("SC_PHYS_PAGES") * os.sysconf("SC_PAGE_SIZE") // (1024 * 1024))
    except (ValueError, OSError, AttributeError):
        raise UsageError("cannot determine physical memory; write a plan file instead of --plan auto")


def cmd_select(args: argparse.Namespace) -> int:
    d = load_table(args.dataset)
    report = select_variables(d, args.target, args.threshold, args.exponent, args.clump, args.workers)
    write_rows(_open_out(args.output), ["variable", "mic", "selected"], report.to_rows())
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    d = load_table(args.dataset, label=args.label)
    target = args.target or d.power_variable()
    features = _feature_list(args) or d.feature_names(target)
    if not args.output:
        raise UsageError("train needs --output")
    fitted = fit_model(d, args.model, target, features, args.seed, **_trainer_params(args, len(features)))
    save_model(fitted, args.output)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    d = load_table(args.dataset)
    if args.k > d.n_rows:
        raise UsageError(f"--k {args.k} exceeds the {d.n_rows} rows of {args.dataset}")
    if bool(args.model_kind) == bool(args.model_file):
        raise UsageError("give exactly one of --model-kind or --model-file")

    if args.model_file:
        fitted = load_model(args.model_file)
        kind, target, features = fitted.kind, fitted.target, list(fitted.features)
        params: Dict[str, Any] = {}
        if kind == "ret":
            params["alpha"] = fitted.model.alpha
        elif kind == "mlp":
            params["mlp_config"] = fitted.model.config
    else:
        kind = args.model_kind
        target = args.target or d.power_variable()
        features = _feature_list(args) or d.feature_names(target)
        params = _trainer_params(args, len(features))

    trainer = make_trainer(kind, seed=args.seed, **params)
    report = cross_validate(d, target, features, trainer, args.k, args.seed, args.workers, kind)
    write_report(report, _open_out(args.output))
    if args.trace:
        write_trace(report, args.trace)
    if args.timing_repeats:
        timing = timing_report(trainer, d, target, features, args.timing_repeats)
        sys.stderr.write(f"training time {timing.seconds:.6f} s (sd {timing.sd:.6f}, n={len(timing.samples)})\n")
    if report.pe_excluded:
        sys.stderr.write(f"{report.pe_excluded} zero-valued samples excluded from PE/APE\n")
    return EXIT_OK


def cmd_choose(args: argparse.Namespace) -> int:
    reports = {path: read_report_summary(path) for path in args.reports}
    ranking = rank_reports(reports)
    rows = [(i, r.name, r.ape, r.r2) for i, r in enumerate(ranking, start=1)]
    write_rows(_open_out(args.output), ["rank", "report", "APE", "R2"], rows)
    sys.stderr.write(f"best model: {ranking[0].name}\n")
    return EXIT_OK


def _parse_row(line: str) -> List[str]:
    return [c for c in line.replace(",", " ").split()]


def stream_predictions(fitted: Any, lines: Any, out: TextIO) -> int:
    """Predict each input line as it arrives; returns the number of estimates."""
    count = 0
    features = list(fitted.features)
    for row_number, line in enumerate(lines, start=1):
        cells = _parse_row(line)
        if not cells:
            continue
        if row_number == 1 and cells == features:
            continue
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise InputValidationError(f"row {row_number}: non-numeric value in {line.strip()!r}")
        out.write(format_real(predict_row(fitted, values, row_number)) + "\n")
        out.flush()
        count += 1
    return count


def cmd_predict(args: argparse.Namespace) -> int:
    fitted = load_model(args.model_file)
    if args.row:
        stream_predictions(fitted, args.row, sys.stdout)
    else:
        stream_predictions(fitted, sys.stdin, sys.stdout)
    return EXIT_OK


def cmd_describe(args: argparse.Namespace) -> int:
    d = load_table(args.dataset)
    variable = args.variable or d.power_variable()
    stats = describe(d, variable)
    write_rows(_open_out(args.output), ["variable", "mean", "sd", "min", "max", "n"],
               [(variable, stats["mean"], stats["sd"], stats["min"], stats["max"], stats["n"])])
    return EXIT_OK


def cmd_ks(args: argparse.Namespace) -> int:
    d = load_table(args.dataset)
    variable = args.variable or d.power_variable()
    result = ks_gaussian_test(d.column(variable))
    write_rows(_open_out(args.output), ["variable", "statistic", "p_value", "n", "gaussian_rejected"],
               [(variable, result.statistic, result.p_value, result.n, int(result.gaussian_rejected_at_5pct))])
    return EXIT_OK


def cmd_merge(args: argparse.Namespace) -> int:
    mixed = merge_with_arch_indicator(load_table(args.first), load_table(args.second))
    write_table(mixed, _open_out(args.output))
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    manifest = RunManifest(args.manifest_file)
    if not os.path.exists(args.manifest_file):
        raise InputValidationError(f"{args.manifest_file}: no such manifest")
    if args.dry_run:
        for record in manifest.records():
            if record.outputs and record.argv:
                print("powercorefw " + shlex.join(record.argv))
        return EXIT_OK
    replayed = manifest.replay(main)
    logger.info("replayed %d stages from %s", len(replayed), args.manifest_file)
    return EXIT_OK


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", help="dependent variable (default: the power column)")
    p.add_argument("--features", help="selection report; its selected variables become the features")
    p.add_argument("--feature", action="append", help="feature name (repeatable)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="RET complexity threshold")
    p.add_argument("--hidden-layers", type=int, help="MLP hidden layers (skips configuration search)")
    p.add_argument("--neurons", type=int, help="MLP neurons per hidden layer")
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--chunk-size", type=int, default=REFERENCE_CHUNK_SIZE)
    p.add_argument("--epochs", type=int)
    p.add_argument("--search-budget", type=int, help="maximum MLP configurations tried")
    p.add_argument("--reference-config", action="store_true", help="3 hidden layers of 2v neurons, eta 5, chunk 50")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="powercorefw", description="Power consumption models from OS resource counters")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--audit-log", help="append stage events to this file")
    parser.add_argument("--manifest", help="append a record of this stage to a run manifest")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("collect", help="sample counters and power into a dataset")
    p.add_argument("--replay", help="recorded counters table (ts_ms + raw counters)")
    p.add_argument("--power-source", help="power stream file or tcp://host:port")
    p.add_argument("--cadence-ms", type=int, default=DEFAULT_CADENCE_MS)
    p.add_argument("--duration", type=float, help="live sampling time in seconds")
    p.add_argument("--plan", help="workload plan table, or 'auto' to generate one for this host")
    p.add_argument("--phase-seconds", type=float, default=PHASE_SECONDS)
    p.add_argument("--dry-run", action="store_true", help="print the workload schedule and exit")
    p.add_argument("--rates", action="store_true", help="per-second rates instead of interval deltas")
    p.add_argument("--label")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("select", help="rank variables by MIC against power")
    p.add_argument("dataset")
    p.add_argument("--target")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--exponent", type=float, default=DEFAULT_EXPONENT)
    p.add_argument("--clump", type=int, default=DEFAULT_CLUMP)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="fit an MLR, RET or MLP model")
    p.add_argument("dataset")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--label")
    _add_model_flags(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="k-fold cross-validation report")
    p.add_argument("dataset")
    p.add_argument("--model-kind", choices=MODEL_KINDS)
    p.add_argument("--model-file")
    p.add_argument("--k", type=int, default=DEFAULT_FOLDS)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--trace", help="write (row, actual, estimated) pairs here")
    p.add_argument("--timing-repeats", type=int, default=0)
    _add_model_flags(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("choose", help="rank evaluation reports by APE, then R2")
    p.add_argument("reports", nargs="+")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_choose)

    p = sub.add_parser("predict", help="estimate watts from counter rows")
    p.add_argument("model_file")
    p.add_argument("--row", action="append", help="comma-separated feature values (default: read stdin)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("describe", help="mean, sd, min and max of a variable")
    p.add_argument("dataset")
    p.add_argument("--variable")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("ks", help="Kolmogorov-Smirnov test of a variable against a Gaussian")
    p.add_argument("dataset")
    p.add_argument("--variable")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_ks)

    p = sub.add_parser("merge", help="concatenate two architectures with the ARCH indicator")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("replay", help="re-run the stages recorded in a manifest to rebuild their outputs")
    p.add_argument("manifest_file", metavar="MANIFEST")
    p.add_argument("--dry-run", action="store_true", help="print the recorded command lines and exit")
    p.set_defaults(func=cmd_replay)
    return parser


def _stage_files(args: argparse.Namespace) -> Dict[str, List[str]]:
    inputs = [getattr(args, k) for k in ("dataset", "first", "second", "model_file", "replay", "features")
              if getattr(args, k, None)]
    inputs += list(getattr(args, "reports", None) or [])
    outputs = [getattr(args, k) for k in ("output", "trace") if getattr(args, k, None)]
    return {"inputs": inputs, "outputs": outputs}


_GLOBAL_VALUE_FLAGS = ("--audit-log", "--manifest")


def _stage_argv(argv: Sequence[str]) -> List[str]:
    """The command line minus the global flags, as replayed from a manifest."""
    out: List[str] = []
    skip = False
    for arg in argv:
        if skip:
            skip = False
        elif arg in _GLOBAL_VALUE_FLAGS:
            skip = True
        elif arg.startswith(tuple(f + "=" for f in _GLOBAL_VALUE_FLAGS)):
            continue
        elif arg == "--verbose" or (arg.startswith("-v") and set(arg[1:]) == {"v"}):
            continue
        else:
            out.append(arg)
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point; returns the process exit code.

    Examples:
        >>> main(["select", "a1.csv", "-o", "sel.csv"])
        0
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"powercorefw: usage error: {e}\n")
        return EXIT_USAGE

    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args.audit = AuditLogger(args.audit_log) if args.audit_log else None
    recorded = bool(args.manifest) and args.command != "replay"

    started, started_ms = monotonic_seconds(), now()
    try:
        files = _stage_files(args)
        if recorded:
            # refuse before any output is written
            RunManifest(args.manifest).check_outputs([o for o in files["outputs"] if o != "-"], args.command)
        code = args.func(args)
        parameters = {
            k: v for k, v in vars(args).items()
            if k not in ("func", "audit", "audit_log", "manifest", "verbose", "command") and v is not None
        }
        _record(args, args.command, files["inputs"], files["outputs"], parameters, started, started_ms,
                _stage_argv(argv) if recorded else None)
        return code
    except UsageError as e:
        sys.stderr.write(f"powercorefw: usage error: {e}\n")
        return EXIT_USAGE
    except (PowerCoreError, OSError) as e:
        sys.stderr.write(f"powercorefw: {e}\n")
        if args.audit:
            args.audit.failure(args.command, e)
        return EXIT_FAILURE
