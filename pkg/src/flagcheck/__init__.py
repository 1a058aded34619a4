"""Line-level anomaly flagging by regenerating code with a completion model."""

from .backend import (
    BackendDescriptor,
    CachedBackend,
    GeneratedLine,
    OpenAICompatibleBackend,
    ScriptedMock,
    cache_key,
    generate_line,
)
from .classifier import Criterion, CriterionKind, LineResult, ReportedLines, classify_file, classify_line
from .features import LineFeatures, bleu, distance_from_comment, extract_features, levenshtein
from .pipeline import run_file
from .prompting import GenerationParams, Mode, Prompt, apply_assist, build_prompt
from .srcmodel import PreprocessedFile, SourceLine, is_keyword_only, load_source, split_line

__version__ = "0.1.0"
