from .client import CacheMiss, CompletionCache, CompletionError, CompletionRecord, EndpointConfig, complete, prompt_hash
from .scoring import parse_response, score_conditions, score_table
from .shots import CONDITIONS, Shot, ShotSet, assemble_shots, select_low_response_annotators
from .templates import (
    FillerCatalog,
    PromptError,
    PromptSkeleton,
    build_prompt,
    load_catalog,
    load_skeletons,
    parse_version,
    render,
)

__all__ = [
    "CONDITIONS",
    "CacheMiss",
    "CompletionCache",
    "CompletionError",
    "CompletionRecord",
    "EndpointConfig",
    "FillerCatalog",
    "PromptError",
    "PromptSkeleton",
    "Shot",
    "ShotSet",
    "assemble_shots",
    "build_prompt",
    "complete",
    "load_catalog",
    "load_skeletons",
    "parse_response",
    "parse_version",
    "prompt_hash",
    "render",
    "score_conditions",
    "score_table",
    "select_low_response_annotators",
]
