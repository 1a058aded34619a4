"""Command line entry point: check, eval, sweep, roc, metadata.

Exit codes: 0 success, 1 usage or I/O error, 2 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Sequence

from . import backend as bk
from .classifier import STANDARD_CRITERIA, Criterion, CriterionKind, classify_file
from .evalharness import (
    HarnessError,
    RunRecord,
    benchmark_metadata,
    load_manifest,
    metadata_csv,
    metrics_csv,
    metrics_table,
    metrics_text,
    now_iso,
    read_run_dir,
    roc_csv,
    roc_points,
    score_run,
    sweep,
    sweep_csv,
    write_run_record,
)
from .pipeline import fingerprint, run_file
from .prompting import GenerationParams, Mode
from .srcmodel import SourceError, load_source

logger = logging.getLogger("flagcheck")

EXIT_OK, EXIT_USAGE, EXIT_BACKEND = 0, 1, 2

ENV_PREFIX = "FLAG_"
_ENV_KEYS = ("backend", "model", "endpoint", "api", "mode", "cache_dir", "mock_script")


@dataclass
class RunConfig:
    backend: str = "http"
    api: str = "completions"
    model: str = "code-davinci-002"
    endpoint: str = "https://api.openai.com/v1"
    logprobs: bool | None = None
    mock_script: str | None = None
    mode: Mode = Mode.AUTO_COMPLETE
    params: GenerationParams = field(default_factory=GenerationParams)
    criterion: Criterion = field(default_factory=Criterion)
    parallelism: int = 1
    cache_dir: str | None = None
    output: str = "text"

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.output not in ("text", "json"):
            raise ValueError("output must be 'text' or 'json'")
        if self.backend not in ("http", "mock", "replay"):
            raise ValueError("backend must be http, mock or replay")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _generation_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("generation")
    g.add_argument("--config", help="JSON config file; CLI flags take precedence")
    g.add_argument("--mode", choices=["auto", "insert", "instruct"])
    g.add_argument("--backend", choices=["http", "mock", "replay"])
    g.add_argument("--api", choices=["completions", "chat"])
    g.add_argument("--model")
    g.add_argument("--endpoint")
    g.add_argument("--logprobs", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--mock-script", help="JSON script for --backend mock")
    g.add_argument("--assist-chars", type=int)
    g.add_argument("--max-attempts", type=int)
    g.add_argument("--cache-dir")
    g.add_argument("--parallelism", type=int)


def _criterion_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("classification")
    g.add_argument("--criterion", choices=["C0", "C1", "C2"])
    g.add_argument("--ld-limit", type=int)
    g.add_argument("--dfc-limit", type=int)
    g.add_argument("--logprob-threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flagcheck", description="Flag anomalous source lines by regenerating them.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="check one source file")
    p.add_argument("file")
    p.add_argument("--language", choices=["c", "python", "verilog"])
    p.add_argument("--start-line", type=int)
    p.add_argument("--output", choices=["text", "json"])
    _generation_args(p)
    _criterion_args(p)

    p = sub.add_parser("eval", help="run every case of a benchmark manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default="flag-eval", help="output directory")
    p.add_argument("--output", choices=["text", "json"])
    _generation_args(p)
    _criterion_args(p)

    for name, helptext in (("sweep", "DD/FPR/TPR grid over (ld_limit, dfc_limit)"),
                           ("roc", "ROC points over ld_limit thresholds"),
                           ("metadata", "per-benchmark feature statistics")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--runs", required=True, help="directory of run records (*.jsonl)")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", help="CSV path (default: stdout)")
        p.add_argument("--logprob-threshold", type=float, default=-0.5)
        if name == "sweep":
            p.add_argument("--kind", choices=["C0", "C1", "C2"], default="C1")
            p.add_argument("--ld-range", default="0:30")
            p.add_argument("--dfc-range", default="0:50")
        elif name == "roc":
            p.add_argument("--kind", choices=["C0", "C1", "C2"], default="C0")
            p.add_argument("--thresholds", default="0:30")
            p.add_argument("--dfc-limit", type=int)
            p.add_argument("--sentinel", action="store_true", help="add the flag-every-line endpoint")
        else:
            p.add_argument("--criterion", default="C2(20,10)", help="criterion deciding 'detected'")
    return parser


def parse_range(text: str) -> list[int]:
    """``"0:30"`` (inclusive), ``"0:30:5"`` or ``"0,5,10"``."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 1
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p.strip()]
    except (ValueError, IndexError):
        raise UsageError(f"bad range {text!r}") from None


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    """Merge defaults < environment < config file < command line."""
    merged: dict = {}
    for key in _ENV_KEYS:
        value = environ.get(ENV_PREFIX + key.upper())
        if value:
            merged[key] = value
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"{args.config}: {exc}") from exc
        merged.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "verbose"):
            merged[key] = value

    try:
        params = GenerationParams(**{k: merged[k] for k in (
            "temperature", "max_tokens", "top_p", "max_attempts", "assist_chars", "max_pre_len", "max_suf_len",
        ) if k in merged})
        kind = CriterionKind(merged.get("criterion", "C2"))
        ld_limit = int(merged.get("ld_limit", 10 if kind is CriterionKind.C0 else 20))
        dfc_limit = None if kind is CriterionKind.C0 else int(merged.get("dfc_limit", 10))
        criterion = Criterion(kind, ld_limit, dfc_limit, float(merged.get("logprob_threshold", -0.5)))
        return RunConfig(
            backend=merged.get("backend", "http"),
            api=merged.get("api", "chat" if merged.get("mode") == "instruct" else "completions"),
            model=merged.get("model", "code-davinci-002"),
            endpoint=merged.get("endpoint", "https://api.openai.com/v1"),
            logprobs=merged.get("logprobs"),
            mock_script=merged.get("mock_script"),
            mode=Mode.parse(merged.get("mode", "auto")),
            params=params,
            criterion=criterion,
            parallelism=int(merged.get("parallelism", 1)),
            cache_dir=merged.get("cache_dir"),
            output=merged.get("output", "text"),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def build_backend(config: RunConfig) -> bk.Backend:
    if config.backend == "mock":
        if config.mock_script:
            try:
                upstream = bk.ScriptedMock.from_json(config.mock_script, model_name=config.model)
            except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
                raise UsageError(f"{config.mock_script}: {exc}") from exc
        else:
            upstream = bk.ScriptedMock(model_name=config.model)
    elif config.backend == "http":
        upstream = bk.OpenAICompatibleBackend(config.endpoint, config.model, api=config.api,
                                              logprobs=config.logprobs)
    else:
        if not config.cache_dir:
            raise UsageError("--backend replay needs --cache-dir")
        is_chat = config.api == "chat"
        descriptor = bk.BackendDescriptor(
            bk.BackendKind.REPLAY, config.model, config.endpoint,
            supports_suffix=not is_chat,
            supports_logprobs=config.logprobs if config.logprobs is not None else not is_chat,
            supports_system_prompt=is_chat,
        )
        return bk.CachedBackend(config.cache_dir, None, descriptor)
    if config.cache_dir:
        return bk.CachedBackend(config.cache_dir, upstream)
    return upstream


def config_fingerprint(config: RunConfig) -> str:
    return fingerprint(config.model, config.mode, config.params)


def _entry_json(entry) -> dict:
    d = {
        "line_no": entry.line_no,
        "original": entry.original,
        "generated": entry.generated,
        "features": entry.features.to_dict(),
        "reasons": list(entry.reasons),
    }
    if entry.removed_by is not None:
        d["removed_by"] = entry.removed_by
    return d


def file_report(path: str, config: RunConfig, reported) -> dict:
    return {
        "file": path,
        "config_fingerprint": config_fingerprint(config),
        "criterion": config.criterion.label,
        "flagged": [_entry_json(e) for e in reported.entries],
    }


def format_text_report(report: dict) -> str:
    out = []
    flagged = [e for e in report["flagged"] if "removed_by" not in e]
    removed = len(report["flagged"]) - len(flagged)
    for e in flagged:
        f = e["features"]
        dfc = "-" if f["dfc"] is None else f["dfc"]
        out.append(f"{report['file']}:{e['line_no']}: ld={f['ld']} dfc={dfc} [{', '.join(e['reasons'])}]")
        out.append(f"    original:  {e['original'].strip()}")
        out.append(f"    generated: {e['generated'].strip()}")
    out.append(f"{len(flagged)} line(s) flagged under {report['criterion']}"
               + (f", {removed} removed by reduce_fp" if removed else ""))
    return "\n".join(out) + "\n"


def cmd_check(args, config: RunConfig) -> int:
    file = load_source(args.file, args.language, args.start_line)
    backend = build_backend(config)
    results = run_file(file, config.mode, config.params, backend, config.parallelism)
    reported = classify_file(results, config.criterion, file.language)
    report = file_report(args.file, config, reported)
    if config.output == "json":
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(format_text_report(report))
    return EXIT_OK


def cmd_eval(args, config: RunConfig) -> int:
    cases = load_manifest(args.manifest)
    if not cases:
        raise UsageError(f"{args.manifest}: manifest has no cases")
    backend = build_backend(config)
    run_dir = os.path.join(args.out, "runs")
    os.makedirs(run_dir, exist_ok=True)
    fp = config_fingerprint(config)

    runs: dict[str, RunRecord] = {}
    failures: dict[str, str] = {}
    worst = EXIT_OK
    case_reports = []
    for case in cases:
        try:
            file = load_source(case.path, case.language_id, case.start_line)
            if max(case.defect_lines) > file.physical_line_count:
                raise HarnessError(f"{case.id}: defect line beyond end of {case.path}")
            started = now_iso()
            results = run_file(file, config.mode, config.params, backend, config.parallelism)
        except bk.BackendError as exc:
            failures[case.id] = f"backend: {exc}"
            worst = EXIT_BACKEND
            logger.error("%s: %s", case.id, exc)
            continue
        except (SourceError, HarnessError, OSError) as exc:
            failures[case.id] = str(exc)
            worst = max(worst, EXIT_USAGE)
            logger.error("%s: %s", case.id, exc)
            continue
        run = RunRecord(case.id, fp, file.language, results, started, now_iso())
        write_run_record(run, os.path.join(run_dir, f"{case.id}.jsonl"))
        runs[case.id] = run
        reported = classify_file(results, config.criterion, file.language)
        m = score_run(run, case, config.criterion)
        case_reports.append({
            "case_id": case.id,
            "dd": m.dd,
            "false_positives": m.false_positives,
            "total_lines": m.total_lines,
            **file_report(os.path.relpath(case.path, os.path.dirname(os.path.abspath(args.manifest))),
                          config, reported),
        })

    criteria = list(STANDARD_CRITERIA)
    if config.criterion not in criteria:
        criteria.append(config.criterion)
    rows = metrics_table(cases, runs, criteria) if runs else []
    with open(os.path.join(args.out, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(metrics_csv(rows))
    table = metrics_text(rows) if rows else "no successful cases\n"
    with open(os.path.join(args.out, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)

    report = {
        "config_fingerprint": fp,
        "criterion": config.criterion.label,
        "cases": case_reports,
        "failures": failures,
        "metrics": [
            {"group": r.group, "criterion": r.criterion, "dd": r.metrics.dd,
             "total_defects": r.metrics.total_defects, "fpr": r.metrics.fpr, "tpr": r.metrics.tpr,
             "false_positives": r.metrics.false_positives, "total_lines": r.metrics.total_lines}
            for r in rows
        ],
    }
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if config.output == "json":
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(table)
    for case_id, why in failures.items():
        sys.stderr.write(f"{case_id}: FAILED: {why}\n")
    return worst


def _write(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_sweep(args) -> int:
    cases = load_manifest(args.manifest)
    runs = read_run_dir(args.runs)
    cells = sweep(runs, cases, parse_range(args.ld_range), parse_range(args.dfc_range), args.kind,
                  args.logprob_threshold)
    _write(sweep_csv(cells), args.out)
    return EXIT_OK


def cmd_roc(args) -> int:
    cases = load_manifest(args.manifest)
    runs = read_run_dir(args.runs)
    thresholds = parse_range(args.thresholds)
    points = roc_points(runs, cases, thresholds, args.kind, args.dfc_limit, args.sentinel, args.logprob_threshold)
    _write(roc_csv(thresholds, points), args.out)
    return EXIT_OK


def cmd_metadata(args) -> int:
    cases = load_manifest(args.manifest)
    runs = read_run_dir(args.runs)
    criterion = Criterion.parse(args.criterion, args.logprob_threshold)
    rows = []
    for case in cases:
        run = runs.get(case.id)
        if run is None:
            continue
        try:
            file = load_source(case.path, case.language_id, case.start_line)
        except SourceError:
            file = None
        detected = bool(score_run(run, case, criterion).dd)
        rows.append(benchmark_metadata(run, file, detected))
    _write(metadata_csv(rows), args.out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "check":
            return cmd_check(args, resolve_config(args))
        if args.command == "eval":
            return cmd_eval(args, resolve_config(args))
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "roc":
            return cmd_roc(args)
        return cmd_metadata(args)
    except bk.BackendError as exc:
        sys.stderr.write(f"flagcheck: backend failure: {exc}\n")
        return EXIT_BACKEND
    except (UsageError, SourceError, HarnessError, ValueError, OSError) as exc:
        sys.stderr.write(f"flagcheck: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
