"""LLM-as-judge scoring for open-ended answers.

A judge prompt frames the question, the gold answer, and the generated
answer, and demands a one-line ``VERDICT: correct`` / ``VERDICT:
incorrect`` ruling. Responses that omit the line are retried once and
then scored incorrect with an "unparseable" rationale, so one flaky
judge reply can never crash a run. Verdicts are cached by prompt hash;
pass the same mapping across calls to avoid re-judging unchanged items.
"""

from __future__ import annotations

import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, MutableMapping, Optional

from radvqa.qaforge import (
    PromptTemplate,
    Sampling,
    TextGenClient,
    builtin_template,
    prompt_key,
    render_judge_prompt,
)

__all__ = [
    "JudgeError",
    "JudgeItem",
    "JudgeVerdict",
    "judge_open",
    "parse_verdict",
]

VERDICTS = ("correct", "incorrect")
_VERDICT_LINE = re.compile(r"^\s*VERDICT:\s*(correct|incorrect)\s*$",
                           re.IGNORECASE | re.MULTILINE)


class JudgeError(ValueError):
    pass


@dataclass(frozen=True)
class JudgeItem:
    item_id: str
    question: str
    gold: str
    generated: str


@dataclass(frozen=True)
class JudgeVerdict:
    item_id: str
    verdict: str
    rationale: str
    prompt_sha256: str

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise JudgeError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")

    def to_json_obj(self) -> dict:
        return {"item_id": self.item_id, "verdict": self.verdict,
                "rationale": self.rationale, "prompt_sha256": self.prompt_sha256}


def parse_verdict(response: str) -> Optional[tuple[str, str]]:
    """(verdict, rationale) from a judge reply, or None if no ruling line."""
    m = _VERDICT_LINE.search(response)
    if m is None:
        return None
    rationale = (response[: m.start()] + response[m.end():]).strip()
    return m.group(1).lower(), rationale


def _judge_one(prompt: str, client: TextGenClient, sampling: Sampling) -> tuple[str, str]:
    last_error: Optional[Exception] = None
    for _ in range(2):
        try:
            response = client.generate(prompt, sampling)
        except Exception as exc:        # retry once, then surface the failure
            last_error = exc
            continue
        parsed = parse_verdict(response)
        if parsed is not None:
            return parsed
    if last_error is not None:
        raise JudgeError(f"judge client failed after retry: {last_error}") from last_error
    return "incorrect", "unparseable"


def judge_open(items: Iterable[JudgeItem], client: TextGenClient,
               template: Optional[PromptTemplate] = None,
               sampling: Optional[Sampling] = None,
               max_workers: int = 4,
               cache: Optional[MutableMapping[str, tuple[str, str]]] = None,
               ) -> list[JudgeVerdict]:
    """Judge every item, one verdict per item in input order."""
    items = list(items)
    template = template if template is not None else builtin_template("judge")
    sampling = sampling if sampling is not None else Sampling()
    if template.mode != "judge":
        raise JudgeError(f"expected a judge template, got mode {template.mode!r}")
    prompts = [render_judge_prompt(template, it.question, it.gold, it.generated)
               for it in items]
    keys = [prompt_key(p) for p in prompts]

    cache = cache if cache is not None else {}
    lock = threading.Lock()
    with lock:
        pending = {}
        for prompt, key in zip(prompts, keys):
            if key not in cache and key not in pending:
                pending[key] = prompt
    if pending:
        order = list(pending.items())
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            results = list(pool.map(lambda kv: _judge_one(kv[1], client, sampling), order))
        with lock:
            for (key, _), outcome in zip(order, results):
                cache[key] = outcome
    return [JudgeVerdict(item_id=it.item_id, verdict=cache[key][0],
                         rationale=cache[key][1], prompt_sha256=key)
            for it, key in zip(items, keys)]
