"""Robustness-penalized closed-ended accuracy.

Each test item is answered five times with different sampling seeds. An
item is non-robust when at most two of the five normalized answers agree
with the most common one; a non-robust item earns zero credit even when
its modal answer matches gold, and that forfeited credit is tallied in
`n_penalized`. Normalization makes answer equality well-defined:
lowercase, punctuation stripped, articles dropped, and bare option
letters mapped to the option text when options are supplied.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .textmetrics import tokenize

__all__ = [
    "RobustnessError",
    "normalize_answer",
    "GenerationSet",
    "ItemOutcome",
    "RobustAccuracy",
    "robust_mcq_accuracy",
]

N_GENERATIONS = 5
_ARTICLES = frozenset({"a", "an", "the"})
_LETTER = re.compile(r"^\(?([a-z])[).:]?$")


class RobustnessError(ValueError):
    pass


def normalize_answer(text: str, options: Optional[Sequence[str]] = None) -> str:
    raw = tokenize(text)
    # letter mapping first: a bare "a" is an option pick, not an article
    if options and len(raw) == 1:
        m = _LETTER.match(raw[0])
        if m:
            index = ord(m.group(1)) - ord("a")
            if 0 <= index < len(options):
                return normalize_answer(options[index])
    return " ".join(t for t in raw if t not in _ARTICLES)


@dataclass(frozen=True)
class GenerationSet:
    """Five seeded generations for one item, with the modal answer
    computed over normalized texts (ties broken lexicographically)."""

    item_id: str
    gold: str
    generations: tuple[str, ...]
    seeds: tuple[int, ...]
    options: Optional[tuple[str, ...]] = None
    normalized: tuple[str, ...] = field(init=False)
    modal_answer: str = field(init=False)
    modal_count: int = field(init=False)

    def __post_init__(self):
        if len(self.generations) != N_GENERATIONS:
            raise RobustnessError(
                f"{self.item_id}: expected {N_GENERATIONS} generations, got {len(self.generations)}")
        if len(self.seeds) != N_GENERATIONS:
            raise RobustnessError(
                f"{self.item_id}: expected {N_GENERATIONS} seeds, got {len(self.seeds)}")
        normalized = tuple(normalize_answer(g, self.options) for g in self.generations)
        counts = Counter(normalized)
        modal, count = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        object.__setattr__(self, "normalized", normalized)
        object.__setattr__(self, "modal_answer", modal)
        object.__setattr__(self, "modal_count", count)

    @property
    def robust(self) -> bool:
        return self.modal_count >= 3

    @property
    def modal_matches_gold(self) -> bool:
        return self.modal_answer == normalize_answer(self.gold, self.options)


@dataclass(frozen=True)
class ItemOutcome:
    item_id: str
    credit: int
    robust: bool
    modal_matches_gold: bool
    penalized: bool           # would have scored but for the robustness rule


@dataclass(frozen=True)
class RobustAccuracy:
    accuracy: float
    n_penalized: int
    n_items: int
    outcomes: tuple[ItemOutcome, ...]


def robust_mcq_accuracy(sets: Iterable[GenerationSet]) -> RobustAccuracy:
    items = list(sets)
    if not items:
        raise RobustnessError("no generation sets to score")
    outcomes = []
    for s in items:
        match = s.modal_matches_gold
        credit = 1 if (match and s.robust) else 0
        outcomes.append(ItemOutcome(
            item_id=s.item_id, credit=credit, robust=s.robust,
            modal_matches_gold=match, penalized=match and not s.robust))
    return RobustAccuracy(
        accuracy=sum(o.credit for o in outcomes) / len(outcomes),
        n_penalized=sum(o.penalized for o in outcomes),
        n_items=len(outcomes),
        outcomes=tuple(outcomes))
