"""N-gram text metrics.

Tokenization is fixed so scores stay comparable across runs: lowercase,
split on Unicode whitespace, strip leading/trailing punctuation from each
token, drop tokens that end up empty.

BLEU is the standard corpus formula applied to a single candidate:
geometric mean of modified n-gram precisions times a brevity penalty.
With smoothing enabled, a zero n-gram hit count is replaced by 0.1
before dividing (the classic add-epsilon fallback); with smoothing off,
any zero precision zeroes the score. Orders with no candidate n-grams
at all are excluded from the geometric mean rather than treated as zero.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

__all__ = [
    "MetricError",
    "tokenize",
    "bleu",
    "bleu_report",
    "RougeScore",
    "rouge",
]

SMOOTH_EPS = 0.1


class MetricError(ValueError):
    pass


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    out = []
    for raw in text.lower().split():
        token = raw.strip("".join(ch for ch in raw if _is_punct(ch)))
        if token:
            out.append(token)
    return out


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_report(candidate: str, references: Iterable[str], max_n: int = 4,
                smoothing: bool = True) -> dict:
    """Full scoring breakdown; `bleu` returns just the scalar."""
    refs = [tokenize(r) for r in references]
    if not refs:
        raise MetricError("BLEU needs at least one reference")
    if max_n < 1:
        raise MetricError(f"max_n must be >= 1, got {max_n}")
    cand = tokenize(candidate)

    # orders longer than the candidate have nothing to score and are
    # skipped, so identity candidates of any length still reach 1.0
    precisions: list[Optional[float]] = []
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(cand, n)
        total = sum(cand_counts.values())
        if total == 0:
            precisions.append(None)
            continue
        clipped = 0
        for gram, count in cand_counts.items():
            best = max(ref_counts.get(gram, 0)
                       for ref_counts in (_ngrams(r, n) for r in refs))
            clipped += min(count, best)
        if clipped == 0 and smoothing:
            precisions.append(SMOOTH_EPS / total)
        else:
            precisions.append(clipped / total)

    # closest reference length; ties go to the shorter reference
    c_len = len(cand)
    r_len = min((abs(len(r) - c_len), len(r)) for r in refs)[1] if refs else 0
    if c_len == 0:
        bp = 0.0
    elif c_len > r_len:
        bp = 1.0
    else:
        bp = math.exp(1 - r_len / c_len)

    scored = [p for p in precisions if p is not None]
    if not scored or any(p == 0.0 for p in scored):
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in scored) / len(scored))
    return {
        "score": score,
        "precisions": precisions,
        "brevity_penalty": bp,
        "candidate_length": c_len,
        "reference_length": r_len,
        "max_n": max_n,
        "smoothing": "add-epsilon(0.1)" if smoothing else "none",
    }


def bleu(candidate: str, references: Iterable[str], max_n: int = 4,
         smoothing: bool = True) -> float:
    return bleu_report(candidate, references, max_n=max_n, smoothing=smoothing)["score"]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False     # both sides empty after tokenization


def _f1(match: float, cand_total: int, ref_total: int, degenerate: bool = False) -> RougeScore:
    p = match / cand_total if cand_total else 0.0
    r = match / ref_total if ref_total else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return RougeScore(precision=p, recall=r, f1=f, degenerate=degenerate)


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _skip_bigrams(tokens: Sequence[str], window: int) -> Counter:
    grams = Counter()
    for i in range(len(tokens)):
        for j in range(i + 1, min(i + window, len(tokens) - 1) + 1):
            grams[(tokens[i], tokens[j])] += 1
    return grams


def rouge(candidate: str, reference: str, variant: str, *,
          n: int = 2, window: int = 4) -> RougeScore:
    """variant: 'n' (n-gram overlap), 'l' (longest common subsequence),
    or 's' (skip-bigrams whose positions differ by at most `window`)."""
    variant = variant.lower()
    if variant not in ("n", "l", "s"):
        raise MetricError(f"variant must be one of n, l, s, got {variant!r}")
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand and not ref:
        return RougeScore(0.0, 0.0, 0.0, degenerate=True)

    if variant == "l":
        return _f1(_lcs_len(cand, ref), len(cand), len(ref))
    if variant == "n":
        if n < 1:
            raise MetricError(f"n must be >= 1, got {n}")
        cg, rg = _ngrams(cand, n), _ngrams(ref, n)
        match = sum(min(count, rg.get(g, 0)) for g, count in cg.items())
        return _f1(match, sum(cg.values()), sum(rg.values()))
    if window < 1:
        raise MetricError(f"window must be >= 1, got {window}")
    cg, rg = _skip_bigrams(cand, window), _skip_bigrams(ref, window)
    match = sum(min(count, rg.get(g, 0)) for g, count in cg.items())
    return _f1(match, sum(cg.values()), sum(rg.values()))
