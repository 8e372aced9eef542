"""Rule-based rejection of noisy generated pairs.

Rules fire in a fixed order (banned_phrase, too_short, too_long,
low_overlap) and a rejection carries exactly the first rule that fired.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .parse import ParsedPair

STOPWORDS = frozenset(
    "a an the of in on at is are was were be been being this that these those "
    "with and or to for by it its as from no not which what there".split())

_WORD = re.compile(r"[a-z0-9]+")

DEFAULT_BANNED = (
    "cannot see",
    "can't see",
    "as an ai",
    "i am unable",
    "i'm sorry",
    "no image provided",
    "it is impossible to",
)


def content_words(text: str) -> list[str]:
    return [w for w in _WORD.findall(text.lower()) if w not in STOPWORDS]


@dataclass(frozen=True)
class FilterRules:
    min_answer_tokens: int = 1
    max_answer_tokens: int = 64
    banned_phrases: tuple[str, ...] = DEFAULT_BANNED
    min_question_overlap: int = 1


@dataclass(frozen=True)
class FilteredPair:
    pair: ParsedPair
    rule: str


def filter_noisy(pairs: list[ParsedPair], rules: FilterRules,
                 caption: str = "") -> tuple[list[ParsedPair], list[FilteredPair]]:
    """Partition pairs into (kept, rejected); the overlap rule compares the
    question against `caption` and is skipped when min_question_overlap=0."""
    kept: list[ParsedPair] = []
    rejected: list[FilteredPair] = []
    caption_words = set(content_words(caption))
    for pair in pairs:
        rule = _first_violation(pair, rules, caption_words)
        if rule is None:
            kept.append(pair)
        else:
            rejected.append(FilteredPair(pair=pair, rule=rule))
    return kept, rejected


def _first_violation(pair: ParsedPair, rules: FilterRules, caption_words: set[str]):
    haystack = f"{pair.question} {pair.answer}".lower()
    for phrase in rules.banned_phrases:
        if phrase.lower() in haystack:
            return "banned_phrase"
    n_tokens = len(pair.answer.split())
    if n_tokens < rules.min_answer_tokens:
        return "too_short"
    if n_tokens > rules.max_answer_tokens:
        return "too_long"
    if rules.min_question_overlap > 0:
        overlap = caption_words.intersection(content_words(pair.question))
        if len(overlap) < rules.min_question_overlap:
            return "low_overlap"
    return None
