"""prompt -> generate -> extract for a whole file."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

from .backend import Backend, generate_file
from .classifier import LineResult
from .features import extract_file_features
from .prompting import GenerationParams, Mode
from .srcmodel import PreprocessedFile


def fingerprint(model_name: str, mode: Mode | str, params: GenerationParams) -> str:
    """Short digest identifying a generation configuration."""
    payload = {"model_name": model_name, "mode": Mode.parse(mode).value, "params": asdict(params)}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def run_file(file: PreprocessedFile, mode: Mode | str, params: GenerationParams, backend: Backend,
             parallelism: int = 1) -> list[LineResult]:
    generated = generate_file(file, mode, params, backend, parallelism)
    features = extract_file_features(file, generated)
    results = []
    for loc, gen, feats in zip(file.checkable_indices(), generated, features):
        line = file.lines[loc]
        results.append(LineResult(
            index=loc,
            line_no=line.original_line_no,
            original=line.raw,
            original_code=line.code_part,
            generated=gen.text,
            features=feats,
            attempts_used=gen.attempts_used,
            notes=tuple(gen.errors_noted),
            from_cache=gen.from_cache,
        ))
    return results
