"""Prompt construction from windows of the original file."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .srcmodel import PreprocessedFile, SourceLine

INSTRUCTION = "You are a skilled AI programming assistant. Complete the next line of code."


class Mode(str, enum.Enum):
    AUTO_COMPLETE = "auto_complete"
    INSERTION = "insertion"
    INSTRUCTED_COMPLETE = "instructed_complete"

    @classmethod
    def parse(cls, value: str | Mode) -> Mode:
        if isinstance(value, cls):
            return value
        aliases = {"auto": cls.AUTO_COMPLETE, "insert": cls.INSERTION, "instruct": cls.INSTRUCTED_COMPLETE}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ValueError(f"unknown mode {value!r}") from None


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 150
    top_p: float = 1.0
    stop: str = "\n"
    max_attempts: int = 3
    assist_chars: int = 4
    max_pre_len: int = 50
    max_suf_len: int = 50

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.assist_chars < 0:
            raise ValueError("assist_chars must be >= 0")
        if self.max_pre_len < 0 or self.max_suf_len < 0:
            raise ValueError("window lengths must be >= 0")


@dataclass(frozen=True)
class Prompt:
    prefix: str
    mode: Mode = Mode.AUTO_COMPLETE
    suffix: str | None = None
    assist: str = ""
    system_instruction: str | None = None
    # bookkeeping for scripted backends; never sent upstream or hashed
    path: str = field(default="", compare=False)
    line_no: int = field(default=0, compare=False)
    original: str = field(default="", compare=False)

    def __post_init__(self):
        if self.suffix is not None and self.mode is not Mode.INSERTION:
            raise ValueError("a suffix requires insertion mode")
        if self.mode is Mode.INSTRUCTED_COMPLETE and self.system_instruction != INSTRUCTION:
            raise ValueError("instructed_complete requires the fixed system instruction")

    @property
    def text(self) -> str:
        """Prompt text the model continues from: prefix, newline, assist."""
        head = self.prefix + "\n" if self.prefix else ""
        return head + self.assist


def build_prompt(file: PreprocessedFile, loc: int, mode: Mode | str = Mode.AUTO_COMPLETE,
                 params: GenerationParams | None = None) -> Prompt:
    params = params or GenerationParams()
    mode = Mode.parse(mode)
    if not file.start_index <= loc < len(file.lines):
        raise IndexError(f"line index {loc} outside [{file.start_index}, {len(file.lines)})")

    raws = [ln.raw for ln in file.lines]
    prefix = "\n".join(raws[max(0, loc - params.max_pre_len):loc])
    suffix = None
    if mode is Mode.INSERTION:
        suffix = "\n".join(raws[loc + 1:loc + 1 + params.max_suf_len])
    target = file.lines[loc]
    return Prompt(
        prefix=prefix,
        mode=mode,
        suffix=suffix,
        system_instruction=INSTRUCTION if mode is Mode.INSTRUCTED_COMPLETE else None,
        path=file.path,
        line_no=target.original_line_no,
        original=target.raw,
    )


def apply_assist(prompt: Prompt, original_line: SourceLine | str,
                 params: GenerationParams | None = None) -> Prompt:
    """Seed the prompt with the first characters of the original line.

    Only used after a failed attempt. The caller compares
    ``assist + completion`` against the original line.
    """
    params = params or GenerationParams()
    raw = original_line.raw if isinstance(original_line, SourceLine) else original_line
    return replace(prompt, assist=raw[:params.assist_chars])
