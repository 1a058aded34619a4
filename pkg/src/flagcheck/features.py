"""Line comparison features: edit distance, BLEU, comment distance, logprob."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .backend import GeneratedLine
from .srcmodel import LanguageProfile, PreprocessedFile, SourceLine, get_profile, split_line

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class LineFeatures:
    ld: int
    ld_no_ws: int
    bleu1: float | None = None
    bleu_cumulative: tuple[float, ...] | None = None
    dfc: int | None = None
    mean_logprob: float | None = None
    prev_comment_bleu1: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["bleu_cumulative"] is not None:
            d["bleu_cumulative"] = list(d["bleu_cumulative"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LineFeatures:
        d = dict(d)
        if d.get("bleu_cumulative") is not None:
            d["bleu_cumulative"] = tuple(d["bleu_cumulative"])
        return cls(**d)


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over code points (insert, delete, substitute)."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        for j, cb in enumerate(b, 1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            ))
        previous = current
    return previous[-1]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> list[float]:
    """Cumulative BLEU-1..max_n of a candidate against a single reference.

    Modified (clipped) n-gram precisions, combined by an unweighted geometric
    mean and scaled by the brevity penalty. No smoothing: a zero precision at
    any order makes that and every higher cumulative score 0. Empty inputs
    score 0.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not candidate or not reference:
        return [0.0] * max_n
    c, r = len(candidate), len(reference)
    bp = 1.0 if c > r else math.exp(1 - r / c)

    scores = []
    log_sum = 0.0
    zero = False
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        total = sum(cand.values())
        ref = _ngrams(reference, n)
        matched = sum(min(count, ref[g]) for g, count in cand.items())
        if total == 0 or matched == 0:
            zero = True
        if zero:
            scores.append(0.0)
            continue
        log_sum += math.log(matched / total)
        scores.append(bp * math.exp(log_sum / n))
    return scores


def comment_tokens(comment: str, language: LanguageProfile | str) -> list[str]:
    """Lowercased whitespace tokens of a comment with its markers removed."""
    language = get_profile(language)
    text = comment
    markers = list(language.line_comment_markers) + list(language.docstring_quotes)
    for open_, close in language.block_comment_delimiters:
        markers += [open_, close]
    for m in sorted(markers, key=len, reverse=True):
        text = text.replace(m, " ")
    return text.lower().split()


def distance_from_comment(file: PreprocessedFile, loc: int) -> int | None:
    if file.lines[loc].comment_part:
        return 0
    prior = file.prior_comment_index.get(loc)
    if prior is None:
        return None
    return loc - prior


def _comment_bleu(generated_comment: str, original_comment: str, language) -> tuple[float, ...] | None:
    if not generated_comment or not original_comment:
        return None
    return tuple(bleu(comment_tokens(generated_comment, language), comment_tokens(original_comment, language)))


def _split_generated(text: str, original: SourceLine, language) -> tuple[str, str]:
    code, comment, _ = split_line(text.rstrip(), language, original.block_state)
    return code, comment


def extract_features(original: SourceLine, generated: GeneratedLine | str, file: PreprocessedFile, loc: int,
                     language: LanguageProfile | str | None = None,
                     prior_comment_generated: GeneratedLine | str | None = None) -> LineFeatures:
    """Compare one original line with its regeneration.

    ``prior_comment_generated`` is the regeneration of the most recent
    comment-bearing line at or before ``loc``; when given, the BLEU-1 of its
    comment against the original comment is recorded.
    """
    language = get_profile(language or file.language)
    gen_text = generated.text if isinstance(generated, GeneratedLine) else generated
    gen_code, gen_comment = _split_generated(gen_text, original, language)
    orig_code = original.code_part.rstrip()

    ld = levenshtein(orig_code, gen_code)
    ld_no_ws = levenshtein(_WS.sub("", orig_code), _WS.sub("", gen_code))

    cumulative = _comment_bleu(gen_comment, original.comment_part, language)

    prev_bleu = None
    prior = file.prior_comment_index.get(loc)
    if prior is not None and prior_comment_generated is not None:
        prior_line = file.lines[prior]
        prior_text = (prior_comment_generated.text if isinstance(prior_comment_generated, GeneratedLine)
                      else prior_comment_generated)
        _, prior_gen_comment = _split_generated(prior_text, prior_line, language)
        scores = _comment_bleu(prior_gen_comment, prior_line.comment_part, language)
        prev_bleu = scores[0] if scores else None

    mean_lp = generated.mean_logprob if isinstance(generated, GeneratedLine) else None
    return LineFeatures(
        ld=ld,
        ld_no_ws=ld_no_ws,
        bleu1=cumulative[0] if cumulative else None,
        bleu_cumulative=cumulative,
        dfc=distance_from_comment(file, loc),
        mean_logprob=mean_lp,
        prev_comment_bleu1=prev_bleu,
    )


def extract_file_features(file: PreprocessedFile, generated: Sequence[GeneratedLine]) -> list[LineFeatures]:
    """Features for every checkable line; ``generated`` starts at ``file.start_index``."""
    indices = list(file.checkable_indices())
    if len(generated) != len(indices):
        raise ValueError(f"expected {len(indices)} generated lines, got {len(generated)}")
    by_index = dict(zip(indices, generated))
    out = []
    for loc, gen in by_index.items():
        prior = file.prior_comment_index.get(loc)
        out.append(extract_features(file.lines[loc], gen, file, loc, file.language,
                                    prior_comment_generated=by_index.get(prior)))
    return out
