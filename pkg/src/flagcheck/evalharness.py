"""Benchmark manifests, run records, metrics, sweeps and ROC points.

Everything downstream of a ``RunRecord`` is offline: scoring, sweeps,
ROC curves and metadata reclassify stored features and never touch a
backend.
"""

from __future__ import annotations

import csv
import io
import json
import os
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

from .classifier import Criterion, CriterionKind, LineResult, classify_file
from .features import LineFeatures
from .srcmodel import PreprocessedFile, get_profile

CATEGORIES = ("security", "functional")


class HarnessError(Exception):
    pass


@dataclass(frozen=True)
class BenchmarkCase:
    id: str
    path: str
    language_id: str
    defect_lines: frozenset[int]
    category: str = "functional"
    source_group: str = ""
    start_line: int | None = None

    def __post_init__(self):
        if not self.defect_lines:
            raise HarnessError(f"{self.id}: defect_lines must not be empty")
        if any(n < 1 for n in self.defect_lines):
            raise HarnessError(f"{self.id}: defect line numbers are 1-based")
        if self.category not in CATEGORIES:
            raise HarnessError(f"{self.id}: category must be one of {CATEGORIES}")
        get_profile(self.language_id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "language_id": self.language_id,
            "defect_lines": sorted(self.defect_lines),
            "category": self.category,
            "source_group": self.source_group,
            "start_line": self.start_line,
        }


def load_manifest(path: str | os.PathLike) -> list[BenchmarkCase]:
    """Read a JSON array of cases; relative paths resolve against the manifest."""
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise HarnessError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise HarnessError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, list):
        raise HarnessError(f"{path}: manifest must be a JSON array")
    base = os.path.dirname(os.path.abspath(path))
    cases = []
    seen = set()
    for rec in data:
        try:
            case = BenchmarkCase(
                id=str(rec["id"]),
                path=rec["path"] if os.path.isabs(rec["path"]) else os.path.join(base, rec["path"]),
                language_id=rec["language_id"],
                defect_lines=frozenset(int(n) for n in rec["defect_lines"]),
                category=rec.get("category", "functional"),
                source_group=rec.get("source_group", ""),
                start_line=rec.get("start_line"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise HarnessError(f"{path}: bad case record {rec!r}: {exc}") from exc
        if case.id in seen:
            raise HarnessError(f"{path}: duplicate case id {case.id!r}")
        seen.add(case.id)
        cases.append(case)
    return cases


# ---------------------------------------------------------------------------
# run records


@dataclass
class RunRecord:
    case_id: str
    fingerprint: str
    language: str
    lines: list[LineResult]
    started_at: str = ""
    finished_at: str = ""

    @property
    def total_lines(self) -> int:
        return len(self.lines)


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def _line_to_json(run: RunRecord, r: LineResult) -> dict:
    return {
        "case_id": run.case_id,
        "fingerprint": run.fingerprint,
        "language": run.language,
        "index": r.index,
        "line_no": r.line_no,
        "original": r.original,
        "original_code": r.original_code,
        "generated": r.generated,
        "features": r.features.to_dict(),
        "attempts_used": r.attempts_used,
        "notes": list(r.notes),
        "from_cache": r.from_cache,
        "started_at": run.started_at,
        "finished_at": run.finished_at,
    }


def write_run_record(run: RunRecord, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in run.lines:
            fh.write(json.dumps(_line_to_json(run, r), sort_keys=True) + "\n")


def iter_run_lines(path: str | os.PathLike):
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise HarnessError(f"{path}:{n}: corrupt run record ({exc})") from exc


def read_run_record(path: str | os.PathLike) -> RunRecord:
    run = None
    for obj in iter_run_lines(path):
        try:
            result = LineResult(
                index=obj["index"],
                line_no=obj["line_no"],
                original=obj["original"],
                original_code=obj["original_code"],
                generated=obj["generated"],
                features=LineFeatures.from_dict(obj["features"]),
                attempts_used=obj.get("attempts_used", 1),
                notes=tuple(obj.get("notes", ())),
                from_cache=obj.get("from_cache", False),
            )
        except (KeyError, TypeError) as exc:
            raise HarnessError(f"{path}: corrupt run record ({exc})") from exc
        if run is None:
            run = RunRecord(obj["case_id"], obj["fingerprint"], obj["language"], [],
                            obj.get("started_at", ""), obj.get("finished_at", ""))
        elif obj["case_id"] != run.case_id:
            raise HarnessError(f"{path}: mixes cases {run.case_id!r} and {obj['case_id']!r}")
        run.lines.append(result)
    if run is None:
        raise HarnessError(f"{path}: empty run record")
    return run


def read_run_dir(directory: str | os.PathLike) -> dict[str, RunRecord]:
    runs = {}
    for name in sorted(os.listdir(directory)):
        if name.endswith(".jsonl"):
            run = read_run_record(os.path.join(directory, name))
            runs[run.case_id] = run
    if not runs:
        raise HarnessError(f"{directory}: no run records (*.jsonl)")
    return runs


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class EvalMetrics:
    dd: int
    total_defects: int
    total_lines: int
    true_positive_lines: frozenset = field(default_factory=frozenset)
    false_positive_lines: frozenset = field(default_factory=frozenset)
    # scored lines that are not defect lines; the ROC false-positive denominator
    negative_lines: int = 0

    @property
    def tpr(self) -> float:
        return self.dd / self.total_defects if self.total_defects else 0.0

    @property
    def fpr(self) -> float:
        return len(self.false_positive_lines) / self.total_lines if self.total_lines else 0.0

    @property
    def roc_fpr(self) -> float:
        return len(self.false_positive_lines) / self.negative_lines if self.negative_lines else 0.0

    @property
    def false_positives(self) -> int:
        return len(self.false_positive_lines)


def score_flagged(case: BenchmarkCase, flagged: Iterable[int], scored_line_nos: Iterable[int]) -> EvalMetrics:
    """Score a set of flagged line numbers against one case.

    The case's defect counts once if any of its lines is flagged.
    """
    scored = set(scored_line_nos)
    flagged = set(flagged) & scored
    hits = flagged & case.defect_lines
    fps = flagged - case.defect_lines
    return EvalMetrics(
        dd=1 if hits else 0,
        total_defects=1,
        total_lines=len(scored),
        true_positive_lines=frozenset((case.id, n) for n in hits),
        false_positive_lines=frozenset((case.id, n) for n in fps),
        negative_lines=len(scored - case.defect_lines),
    )


def score_run(run: RunRecord, case: BenchmarkCase, c: Criterion) -> EvalMetrics:
    if run.case_id != case.id:
        raise HarnessError(f"run for {run.case_id!r} scored against case {case.id!r}")
    reported = classify_file(run.lines, c, run.language)
    return score_flagged(case, reported.flagged_line_nos(), (r.line_no for r in run.lines))


def aggregate(metrics: Sequence[EvalMetrics]) -> EvalMetrics:
    """Pool cases: sums of defects, hits and lines (not a mean of rates)."""
    if not metrics:
        raise HarnessError("cannot aggregate an empty group")
    tp, fp = set(), set()
    for m in metrics:
        tp |= m.true_positive_lines
        fp |= m.false_positive_lines
    return EvalMetrics(
        dd=sum(m.dd for m in metrics),
        total_defects=sum(m.total_defects for m in metrics),
        total_lines=sum(m.total_lines for m in metrics),
        true_positive_lines=frozenset(tp),
        false_positive_lines=frozenset(fp),
        negative_lines=sum(m.negative_lines for m in metrics),
    )


def group_key(case: BenchmarkCase, grouping: str) -> str:
    if grouping == "all":
        return "all"
    if grouping == "source_group":
        return case.source_group or "-"
    if grouping == "category":
        return case.category
    if grouping == "language":
        return case.language_id
    raise ValueError(f"unknown grouping {grouping!r}")


def aggregate_by(cases: Sequence[BenchmarkCase], metrics: Mapping[str, EvalMetrics],
                 grouping: str = "source_group") -> dict[str, EvalMetrics]:
    groups: dict[str, list[EvalMetrics]] = {}
    for case in cases:
        if case.id in metrics:
            groups.setdefault(group_key(case, grouping), []).append(metrics[case.id])
    return {k: aggregate(v) for k, v in sorted(groups.items())}


def _paired(runs: Mapping[str, RunRecord], cases: Sequence[BenchmarkCase]):
    pairs = [(runs[c.id], c) for c in cases if c.id in runs]
    if not pairs:
        raise HarnessError("no case has a run record")
    return pairs


def score_all(runs: Mapping[str, RunRecord], cases: Sequence[BenchmarkCase], c: Criterion) -> dict[str, EvalMetrics]:
    return {case.id: score_run(run, case, c) for run, case in _paired(runs, cases)}


# ---------------------------------------------------------------------------
# sweeps and ROC


@dataclass(frozen=True)
class SweepCell:
    ld_limit: int
    dfc_limit: int | None
    metrics: EvalMetrics


def sweep(runs: Mapping[str, RunRecord], cases: Sequence[BenchmarkCase], ld_range: Iterable[int],
          dfc_range: Iterable[int], kind: CriterionKind | str = CriterionKind.C1,
          logprob_threshold: float = -0.5) -> list[SweepCell]:
    """Pooled metrics for every (ld_limit, dfc_limit) pair, ld-major order."""
    ld_range, dfc_range = list(ld_range), list(dfc_range)
    if not ld_range or not dfc_range:
        raise HarnessError("sweep ranges must not be empty")
    kind = CriterionKind(kind)
    pairs = _paired(runs, cases)
    cells = []
    for ld in ld_range:
        for dfc in dfc_range:
            c = Criterion(kind, ld, None if kind is CriterionKind.C0 else dfc, logprob_threshold)
            pooled = aggregate([score_run(run, case, c) for run, case in pairs])
            cells.append(SweepCell(ld, dfc, pooled))
    return cells


def roc_points(runs: Mapping[str, RunRecord], cases: Sequence[BenchmarkCase], thresholds: Sequence[int],
               kind: CriterionKind | str = CriterionKind.C0, dfc_limit: int | None = None,
               sentinel: bool = False, logprob_threshold: float = -0.5) -> list[tuple[float, float]]:
    """(fpr, tpr) per ld_limit threshold.

    The false-positive rate here is over non-defect lines, the usual ROC
    convention. With ``sentinel`` a final point flags every scored line,
    which is what a lower ld bound of -1 with an unbounded upper limit does.
    """
    if list(thresholds) != sorted(thresholds):
        raise HarnessError("thresholds must be sorted ascending")
    kind = CriterionKind(kind)
    if kind is not CriterionKind.C0 and dfc_limit is None:
        raise HarnessError(f"{kind.value} ROC needs a dfc_limit")
    pairs = _paired(runs, cases)
    points = []
    for t in thresholds:
        c = Criterion(kind, t, dfc_limit if kind is not CriterionKind.C0 else None, logprob_threshold)
        pooled = aggregate([score_run(run, case, c) for run, case in pairs])
        points.append((pooled.roc_fpr, pooled.tpr))
    if sentinel:
        lines = [score_flagged(case, [r.line_no for r in run.lines], [r.line_no for r in run.lines])
                 for run, case in pairs]
        pooled = aggregate(lines)
        points.append((pooled.roc_fpr, pooled.tpr))
    return points


# ---------------------------------------------------------------------------
# per-benchmark metadata


@dataclass(frozen=True)
class BenchmarkMetadata:
    case_id: str
    avg_ld: float | None
    avg_dfc: float | None
    avg_bleu: float | None
    avg_logprob: float | None
    n_comments: int
    n_lines: int
    detected: bool | None = None


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return statistics.fmean(values) if values else None


def benchmark_metadata(run: RunRecord, file: PreprocessedFile | None = None,
                       detected: bool | None = None) -> BenchmarkMetadata:
    """Averages of the stored features plus comment and line counts.

    Counts come from ``file`` when given (every checkable line), otherwise
    from the scored lines of the run.
    """
    feats = [r.features for r in run.lines]
    if file is not None:
        n_comments = sum(1 for ln in file.lines if ln.comment_part)
        n_lines = len(file.lines)
    else:
        n_comments = sum(1 for f in feats if f.dfc == 0)
        n_lines = len(run.lines)
    return BenchmarkMetadata(
        case_id=run.case_id,
        avg_ld=_mean(f.ld for f in feats),
        avg_dfc=_mean(f.dfc for f in feats),
        avg_bleu=_mean(f.bleu1 for f in feats),
        avg_logprob=_mean(f.mean_logprob for f in feats),
        n_comments=n_comments,
        n_lines=n_lines,
        detected=detected,
    )


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def sweep_csv(cells: Sequence[SweepCell]) -> str:
    return _csv(["ld_limit", "dfc_limit", "dd", "fpr", "tpr"],
                ((c.ld_limit, c.dfc_limit, c.metrics.dd, c.metrics.fpr, c.metrics.tpr) for c in cells))


def roc_csv(thresholds: Sequence, points: Sequence[tuple[float, float]]) -> str:
    labels = list(thresholds) + ["all"] * (len(points) - len(thresholds))
    return _csv(["ld_limit", "fpr", "tpr"], ((t, f, p) for t, (f, p) in zip(labels, points)))


def metadata_csv(rows: Sequence[BenchmarkMetadata]) -> str:
    header = ["case_id", "detected", "avg_ld", "avg_dfc", "avg_bleu", "avg_logprob", "n_comments", "n_lines"]
    return _csv(header, ((m.case_id, m.detected, m.avg_ld, m.avg_dfc, m.avg_bleu, m.avg_logprob,
                          m.n_comments, m.n_lines) for m in rows))


@dataclass(frozen=True)
class TableRow:
    group: str
    criterion: str
    metrics: EvalMetrics


def metrics_table(cases: Sequence[BenchmarkCase], runs: Mapping[str, RunRecord],
                  criteria: Sequence[Criterion], grouping: str = "source_group") -> list[TableRow]:
    """Source x criterion rows, each group followed by the pooled total."""
    rows = []
    for c in criteria:
        per_case = score_all(runs, cases, c)
        for group, m in aggregate_by(cases, per_case, grouping).items():
            rows.append(TableRow(group, c.label, m))
        rows.append(TableRow("all", c.label, aggregate(list(per_case.values()))))
    return rows


def metrics_csv(rows: Sequence[TableRow]) -> str:
    return _csv(["group", "criterion", "dd", "total_defects", "fpr", "tpr", "false_positives", "total_lines"],
                ((r.group, r.criterion, r.metrics.dd, r.metrics.total_defects, r.metrics.fpr, r.metrics.tpr,
                  r.metrics.false_positives, r.metrics.total_lines) for r in rows))


def metrics_text(rows: Sequence[TableRow]) -> str:
    """Aligned table: one line per group, DD/FPR/TPR per criterion."""
    criteria = list(dict.fromkeys(r.criterion for r in rows))
    groups = list(dict.fromkeys(r.group for r in rows))
    cell = {(r.group, r.criterion): r.metrics for r in rows}
    head = ["source"] + [f"{c} {k}" for c in criteria for k in ("DD", "FPR", "TPR")]
    body = []
    for g in groups:
        line = [g]
        for c in criteria:
            m = cell.get((g, c))
            line += [f"{m.dd}/{m.total_defects}", f"{m.fpr:.3f}", f"{m.tpr:.3f}"] if m else ["-"] * 3
        body.append(line)
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in [head] + body) + "\n"
