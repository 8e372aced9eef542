"""Synthetic QA generation from image-caption records."""

from .clients import (
    HttpClient,
    LocalEchoClient,
    RecordedReplayClient,
    Sampling,
    TextGenClient,
    prompt_key,
)
from .errors import QAForgeError
from .filters import DEFAULT_BANNED, FilteredPair, FilterRules, content_words, filter_noisy
from .generate import SOURCE_BY_MODE, generate_dataset
from .parse import ParsedPair, RejectedSegment, format_qa, parse_qa
from .templates import (
    MODES,
    PromptTemplate,
    builtin_template,
    load_template,
    render_judge_prompt,
    render_prompt,
)

__all__ = [
    "QAForgeError",
    "PromptTemplate", "MODES", "builtin_template", "load_template",
    "render_prompt", "render_judge_prompt",
    "TextGenClient", "Sampling", "LocalEchoClient", "RecordedReplayClient",
    "HttpClient", "prompt_key",
    "ParsedPair", "RejectedSegment", "parse_qa", "format_qa",
    "FilterRules", "FilteredPair", "DEFAULT_BANNED", "content_words", "filter_noisy",
    "SOURCE_BY_MODE", "generate_dataset",
]
