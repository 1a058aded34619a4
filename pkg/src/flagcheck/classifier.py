"""Criteria C0/C1/C2 and the false-positive reduction pass."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .features import LineFeatures
from .srcmodel import LanguageProfile, SourceLine, get_profile, is_keyword_only


class CriterionKind(str, enum.Enum):
    C0 = "C0"
    C1 = "C1"
    C2 = "C2"


WITHIN_LD = "within_ld"
NEAR_COMMENT = "near_comment"

WS_RECOMPUTE = "ws_recompute"
KEYWORD_ONLY = "keyword_only"
LOW_LOGPROB = "low_logprob"


@dataclass(frozen=True)
class Criterion:
    kind: CriterionKind = CriterionKind.C2
    ld_limit: int = 20
    dfc_limit: int | None = 10
    logprob_threshold: float = -0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", CriterionKind(self.kind))
        if self.ld_limit < 0:
            raise ValueError("ld_limit must be >= 0")
        if self.kind is not CriterionKind.C0:
            if self.dfc_limit is None:
                raise ValueError(f"{self.kind.value} needs a dfc_limit")
            if self.dfc_limit < 0:
                raise ValueError("dfc_limit must be >= 0")

    @property
    def label(self) -> str:
        if self.kind is CriterionKind.C0:
            return f"C0({self.ld_limit})"
        return f"{self.kind.value}({self.ld_limit},{self.dfc_limit})"

    @classmethod
    def parse(cls, text: str, logprob_threshold: float = -0.5) -> Criterion:
        """Parse labels such as ``C0(10)`` or ``C2(20,10)``."""
        m = re.fullmatch(r"\s*(C[012])\s*\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\)\s*", text)
        if not m:
            raise ValueError(f"cannot parse criterion {text!r}")
        dfc = int(m.group(3)) if m.group(3) is not None else None
        return cls(CriterionKind(m.group(1)), int(m.group(2)), dfc, logprob_threshold)


# the three configurations reported side by side
STANDARD_CRITERIA = (
    Criterion(CriterionKind.C0, 10, None),
    Criterion(CriterionKind.C1, 20, 10),
    Criterion(CriterionKind.C2, 20, 10),
)


@dataclass(frozen=True)
class LineResult:
    """One scored line: the original, its regeneration and their features."""
    index: int
    line_no: int
    original: str
    original_code: str
    generated: str
    features: LineFeatures
    attempts_used: int = 1
    notes: tuple[str, ...] = ()
    from_cache: bool = False


@dataclass(frozen=True)
class ReportedLine:
    index: int
    line_no: int
    features: LineFeatures
    reasons: tuple[str, ...]
    removed_by: str | None = None
    original: str = ""
    generated: str = ""


@dataclass
class ReportedLines:
    entries: list[ReportedLine] = field(default_factory=list)

    @property
    def flagged(self) -> list[ReportedLine]:
        return [e for e in self.entries if e.removed_by is None]

    @property
    def removed(self) -> list[ReportedLine]:
        return [e for e in self.entries if e.removed_by is not None]

    def flagged_line_nos(self) -> set[int]:
        return {e.line_no for e in self.flagged}

    def __len__(self):
        return len(self.flagged)


def inclusion_reasons(f: LineFeatures, c: Criterion) -> tuple[str, ...]:
    if f.ld <= 0:
        return ()
    reasons = []
    if f.ld <= c.ld_limit:
        reasons.append(WITHIN_LD)
    if c.kind is not CriterionKind.C0 and f.dfc is not None and 0 < f.dfc < c.dfc_limit:
        reasons.append(NEAR_COMMENT)
    return tuple(reasons)


def classify_line(f: LineFeatures, c: Criterion) -> bool:
    """Inclusion test before any false-positive reduction.

    C0: ``0 < ld <= ld_limit``. C1 and C2:
    ``0 < ld and (ld <= ld_limit or 0 < dfc < dfc_limit)``; a missing dfc
    never satisfies the second clause.
    """
    return bool(inclusion_reasons(f, c))


def removal_reason(f: LineFeatures, original_code: str, language: LanguageProfile, c: Criterion) -> str | None:
    if f.ld_no_ws == 0:
        return WS_RECOMPUTE
    if is_keyword_only(original_code, language):
        return KEYWORD_ONLY
    if f.mean_logprob is not None and f.mean_logprob < c.logprob_threshold:
        return LOW_LOGPROB
    return None


def reduce_fp(candidates: ReportedLines, originals: Sequence[SourceLine | str] | dict,
              language: LanguageProfile | str, c: Criterion) -> ReportedLines:
    """Mark likely false positives as removed; never adds lines.

    ``originals`` maps line index to the original line (or its code part).
    Rules apply in a fixed order so ``removed_by`` is stable: whitespace-free
    distance of zero, keyword-only original, then mean logprob below the
    threshold (skipped when no logprobs were returned).
    """
    if c.kind is not CriterionKind.C2:
        raise ValueError("reduce_fp applies to C2 only")
    language = get_profile(language)
    out = []
    for entry in candidates.entries:
        if entry.removed_by is not None:
            out.append(entry)
            continue
        orig = originals[entry.index]
        code = orig.code_part if isinstance(orig, SourceLine) else orig
        reason = removal_reason(entry.features, code, language, c)
        out.append(replace(entry, removed_by=reason) if reason else entry)
    return ReportedLines(out)


def classify_file(results: Iterable[LineResult], c: Criterion, language: LanguageProfile | str) -> ReportedLines:
    """Select the lines of one file to report under criterion ``c``."""
    language = get_profile(language)
    entries = []
    originals = {}
    for r in results:
        reasons = inclusion_reasons(r.features, c)
        if not reasons:
            continue
        originals[r.index] = r.original_code
        entries.append(ReportedLine(r.index, r.line_no, r.features, reasons,
                                    original=r.original, generated=r.generated))
    reported = ReportedLines(entries)
    if c.kind is CriterionKind.C2:
        reported = reduce_fp(reported, originals, language, c)
    return reported
