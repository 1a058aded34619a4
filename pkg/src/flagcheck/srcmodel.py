"""Source loading and language-aware code/comment separation.

The lexer here is intentionally small: it understands string quoting, line
comments and block comments for C, Python and Verilog, which is all the
checker needs. It never fails on malformed input, so non-compiling code is
handled the same way as valid code.
"""

from __future__ import annotations

import keyword
import os
from dataclasses import dataclass, field

__all__ = [
    "LanguageProfile",
    "SourceLine",
    "PreprocessedFile",
    "SourceError",
    "PROFILES",
    "get_profile",
    "language_for_path",
    "split_line",
    "is_keyword_only",
    "load_source",
    "preprocess_text",
]


class SourceError(Exception):
    """Raised when a source file cannot be loaded or preprocessed."""


@dataclass(frozen=True)
class LanguageProfile:
    language_id: str
    line_comment_markers: tuple[str, ...]
    block_comment_delimiters: tuple[tuple[str, str], ...]
    keywords: frozenset[str]
    string_quotes: tuple[str, ...] = ('"', "'")
    # docstring-style triple quotes that open a comment block at statement level
    docstring_quotes: tuple[str, ...] = ()

    def __post_init__(self):
        markers = list(self.line_comment_markers)
        for open_, close in self.block_comment_delimiters:
            markers += [open_, close]
        if any(not m for m in markers):
            raise ValueError(f"{self.language_id}: empty comment marker")
        if not self.keywords:
            raise ValueError(f"{self.language_id}: empty keyword set")

    @property
    def block_closers(self) -> tuple[str, ...]:
        return tuple(c for _, c in self.block_comment_delimiters) + self.docstring_quotes


_C_KEYWORDS = frozenset("""
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    _Bool _Complex _Imaginary
""".split())

# IEEE 1364-2005 reserved words plus the common SystemVerilog additions
_VERILOG_KEYWORDS = frozenset("""
    always and assign automatic begin buf bufif0 bufif1 case casex casez cell
    cmos config deassign default defparam design disable edge else end endcase
    endconfig endfunction endgenerate endmodule endprimitive endspecify endtable
    endtask event for force forever fork function generate genvar highz0 highz1
    if ifnone incdir include initial inout input instance integer join large
    liblist library localparam macromodule medium module nand negedge nmos nor
    noshowcancelled not notif0 notif1 or output parameter pmos posedge primitive
    pull0 pull1 pulldown pullup pulsestyle_onevent pulsestyle_ondetect rcmos real
    realtime reg release repeat rnmos rpmos rtran rtranif0 rtranif1 scalared
    showcancelled signed small specify specparam strong0 strong1 supply0 supply1
    table task time tran tranif0 tranif1 tri tri0 tri1 triand trior trireg
    unsigned use uwire vectored wait wand weak0 weak1 while wire wor xnor xor
    always_comb always_ff always_latch logic bit byte int unique priority
    endclass class endinterface interface endpackage package import typedef enum
""".split())

PROFILES: dict[str, LanguageProfile] = {
    "c": LanguageProfile(
        language_id="c",
        line_comment_markers=("//",),
        block_comment_delimiters=(("/*", "*/"),),
        keywords=_C_KEYWORDS,
    ),
    "python": LanguageProfile(
        language_id="python",
        line_comment_markers=("#",),
        block_comment_delimiters=(),
        keywords=frozenset(keyword.kwlist),
        docstring_quotes=('"""', "'''"),
    ),
    "verilog": LanguageProfile(
        language_id="verilog",
        line_comment_markers=("//",),
        block_comment_delimiters=(("/*", "*/"),),
        keywords=_VERILOG_KEYWORDS,
        # ' belongs to sized literals (4'b1010), never a string
        string_quotes=('"',),
    ),
}

_EXTENSIONS = {
    ".c": "c", ".h": "c",
    ".py": "python",
    ".v": "verilog", ".sv": "verilog", ".vh": "verilog", ".svh": "verilog",
}

# tokens that carry no logic on their own
_STRUCTURAL = frozenset({"{", "}", "};", "(", ")", ");"})
_TRAILERS = (";", "{", "}", ":")


def get_profile(language: str | LanguageProfile) -> LanguageProfile:
    if isinstance(language, LanguageProfile):
        return language
    try:
        return PROFILES[language.lower()]
    except KeyError:
        raise SourceError(f"unknown language: {language!r}") from None


def language_for_path(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    try:
        return _EXTENSIONS[ext]
    except KeyError:
        raise SourceError(f"cannot infer language from extension {ext!r}; pass a language") from None


@dataclass(frozen=True)
class SourceLine:
    original_line_no: int
    raw: str
    code_part: str
    comment_part: str
    # closing delimiter of the block comment open when this line starts
    block_state: str | None = None

    @property
    def is_comment_only(self) -> bool:
        return not self.code_part and bool(self.comment_part)

    @property
    def has_trailing_comment(self) -> bool:
        return bool(self.code_part) and bool(self.comment_part)

    @property
    def has_comment(self) -> bool:
        return bool(self.comment_part)


@dataclass(frozen=True)
class PreprocessedFile:
    path: str
    language: str
    lines: tuple[SourceLine, ...]
    start_index: int = 0
    prior_comment_index: dict[int, int] = field(default_factory=dict)
    physical_line_count: int = 0

    def __post_init__(self):
        if not self.lines:
            raise SourceError(f"{self.path}: no checkable lines")
        if not 0 <= self.start_index < len(self.lines):
            raise SourceError(f"{self.path}: start index {self.start_index} out of range")

    @property
    def profile(self) -> LanguageProfile:
        return get_profile(self.language)

    def __len__(self):
        return len(self.lines)

    def checkable_indices(self) -> range:
        return range(self.start_index, len(self.lines))

    def index_of_line_no(self, line_no: int) -> int:
        for i, line in enumerate(self.lines):
            if line.original_line_no == line_no:
                return i
        raise KeyError(line_no)


def _resolve_block_state(state, language: LanguageProfile) -> tuple[str, ...]:
    if not state:
        return ()
    if state is True:
        return language.block_closers
    return (state,)


def split_line(raw: str, language: LanguageProfile | str,
               in_block_comment: bool | str | None = None) -> tuple[str, str, str | None]:
    """Split one physical line into its code and comment parts.

    ``in_block_comment`` is the state returned for the previous line: the
    closing delimiter of an open block comment, or a falsy value. ``True``
    is accepted and means "any block closer of this language".

    Returns ``(code_part, comment_part, still_in_block)``. The code part keeps
    its leading whitespace and loses trailing whitespace; whitespace-only code
    collapses to ``""``. Multiple comment segments on one line are joined
    with a single space.
    """
    language = get_profile(language)
    code: list[str] = []
    comments: list[str] = []
    n = len(raw)
    i = 0

    closers = _resolve_block_state(in_block_comment, language)
    if closers:
        hits = [(raw.find(c), c) for c in closers if raw.find(c) >= 0]
        if not hits:
            return "", raw.strip(), closers[0]
        pos, closer = min(hits)
        i = pos + len(closer)
        comments.append(raw[:i].strip())

    quote = None
    seen_code = False
    while i < n:
        ch = raw[i]
        if quote is not None:
            code.append(ch)
            if ch == "\\" and i + 1 < n:
                code.append(raw[i + 1])
                i += 2
                continue
            if raw.startswith(quote, i):
                code.append(raw[i + 1:i + len(quote)])
                i += len(quote)
                quote = None
                continue
            i += 1
            continue

        doc = next((q for q in language.docstring_quotes if raw.startswith(q, i)), None)
        if doc is not None and not seen_code:
            end = raw.find(doc, i + len(doc))
            if end < 0:
                comments.append(raw[i:].strip())
                return _finish(code, comments), _join(comments), doc
            comments.append(raw[i:end + len(doc)])
            i = end + len(doc)
            continue

        block = next(((o, c) for o, c in language.block_comment_delimiters if raw.startswith(o, i)), None)
        if block is not None:
            open_, close = block
            end = raw.find(close, i + len(open_))
            if end < 0:
                comments.append(raw[i:].strip())
                return _finish(code, comments), _join(comments), close
            comments.append(raw[i:end + len(close)])
            i = end + len(close)
            continue

        if any(raw.startswith(m, i) for m in language.line_comment_markers):
            comments.append(raw[i:].strip())
            break

        if doc is not None:
            # triple-quoted string inside an expression
            quote = doc
            seen_code = True
            code.append(doc)
            i += len(doc)
            continue
        if ch in language.string_quotes:
            quote = ch
        code.append(ch)
        seen_code = seen_code or not ch.isspace()
        i += 1

    return _finish(code, comments), _join(comments), None


def _finish(code: list[str], comments: list[str]) -> str:
    text = "".join(code).rstrip()
    return text if text.strip() else ""


def _join(comments: list[str]) -> str:
    return " ".join(c.strip() for c in comments if c.strip())


def is_keyword_only(code_part: str, language: LanguageProfile | str) -> bool:
    """True when the code is a lone keyword or structural token.

    One trailing ``;``, ``{``, ``}`` or ``:`` is tolerated, so ``else {``,
    ``break;`` and ``else:`` all count, while ``return x;`` does not.
    """
    language = get_profile(language)
    text = code_part.strip()
    if not text:
        return False
    if text in _STRUCTURAL:
        return True
    if text in language.keywords:
        return True
    for trailer in _TRAILERS:
        if text.endswith(trailer):
            head = text[: -len(trailer)].rstrip()
            if head in language.keywords:
                return True
    return False


def preprocess_text(text: str, language: str | LanguageProfile, path: str = "<string>",
                    start_line: int | None = None) -> PreprocessedFile:
    profile = get_profile(language)
    physical = text.split("\n")
    if physical and physical[-1] == "" and text.endswith("\n"):
        physical.pop()

    lines: list[SourceLine] = []
    state = None
    for no, line in enumerate(physical, start=1):
        raw = line.rstrip()
        if not raw.strip():
            continue
        code, comment, new_state = split_line(raw, profile, state)
        lines.append(SourceLine(no, raw, code, comment, state))
        state = new_state

    if not lines:
        raise SourceError(f"{path}: no checkable lines")

    if start_line is None:
        start_line = 1
    if start_line < 1:
        raise SourceError(f"{path}: start line must be >= 1, got {start_line}")
    start_index = next((i for i, ln in enumerate(lines) if ln.original_line_no >= start_line), None)
    if start_index is None:
        raise SourceError(f"{path}: start line {start_line} is beyond the last checkable line")

    prior: dict[int, int] = {}
    last = None
    for i, ln in enumerate(lines):
        if ln.comment_part:
            last = i
        if last is not None:
            prior[i] = last

    return PreprocessedFile(
        path=path,
        language=profile.language_id,
        lines=tuple(lines),
        start_index=start_index,
        prior_comment_index=prior,
        physical_line_count=len(physical),
    )


def load_source(path: str, language_id: str | None = None,
                start_line: int | None = None) -> PreprocessedFile:
    """Read ``path`` and preprocess it into checkable lines.

    Blank lines are dropped, trailing whitespace is trimmed and the language
    is inferred from the extension unless ``language_id`` is given.
    """
    language = get_profile(language_id) if language_id else get_profile(language_for_path(path))
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise SourceError(f"{path}: {exc.strerror or exc}") from exc
    text = data.decode("utf-8", errors="replace").replace("\r\n", "\n").replace("\r", "\n")
    return preprocess_text(text, language, path=path, start_line=start_line)
