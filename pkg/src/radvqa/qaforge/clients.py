"""Text-generation clients behind one small interface.

The model actually used for generation is abstracted away: production goes
through HttpClient, fixtures are recorded once and replayed byte-identically
by RecordedReplayClient, and LocalEchoClient is a deterministic test double
that fabricates plausible output from the prompt alone.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, runtime_checkable

import httpx

from .errors import QAForgeError
from .filters import content_words
from .parse import ParsedPair, format_qa


@dataclass(frozen=True)
class Sampling:
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int = 0


@runtime_checkable
class TextGenClient(Protocol):
    def generate(self, prompt: str, sampling: Sampling) -> str: ...

    def identity(self) -> str: ...


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


_CAPTION_LINE = re.compile(r"^Caption:\s*(.+)$", re.MULTILINE)
_JUDGE_FIELD = re.compile(r"^(Reference|Candidate) answer:\s*(.*)$", re.MULTILINE)


class LocalEchoClient:
    """Deterministic scripted generator for tests and cassette recording.

    Fabricates three QA pairs from the caption embedded in a generation
    prompt, or an agreement verdict for a judge prompt. Output depends only
    on the prompt text.
    """

    def identity(self) -> str:
        return "local-echo"

    def generate(self, prompt: str, sampling: Sampling) -> str:
        if "VERDICT:" in prompt:
            return self._judge(prompt)
        m = _CAPTION_LINE.search(prompt)
        if m is None:
            raise QAForgeError("local-echo cannot find a Caption line in the prompt")
        return self._qa(m.group(1).strip())

    def _judge(self, prompt: str) -> str:
        fields = {k.lower(): v.strip() for k, v in _JUDGE_FIELD.findall(prompt)}
        ref = set(content_words(fields.get("reference", "")))
        cand = set(content_words(fields.get("candidate", "")))
        agree = bool(ref) and bool(cand) and (ref <= cand or cand <= ref)
        return f"VERDICT: {'correct' if agree else 'incorrect'}"

    def _qa(self, caption: str) -> str:
        words = content_words(caption) or ["scan"]
        first, last = words[0], words[-1]
        answer = " ".join(caption.split()[:12])
        fillers = ("normal appearance", "imaging artifact", "incidental note")
        slot = len(caption) % 4
        options = list(fillers)
        options.insert(slot, last)
        pairs = [
            ParsedPair(question=f"What does this {first} study demonstrate?",
                       answer=answer),
            ParsedPair(question=f"Which key term is associated with {first} here?",
                       answer=last),
            ParsedPair(question=f"Which term best matches the {first} finding?",
                       answer=last, kind="mcq", options=tuple(options)),
        ]
        return format_qa(pairs)


class RecordedReplayClient:
    """Replays cassette entries keyed by prompt hash; optionally records.

    Cassette format: JSONL of {"prompt_sha256": ..., "text": ...}. With a
    `record_with` client, misses are generated, appended, and returned;
    without one, a miss is an error.
    """

    def __init__(self, cassette_path: str | Path,
                 record_with: Optional[TextGenClient] = None):
        self.path = Path(cassette_path)
        self.record_with = record_with
        self._lock = threading.Lock()
        self._cache: dict[str, str] = {}
        if self.path.exists():
            for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    self._cache[obj["prompt_sha256"]] = obj["text"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise QAForgeError(f"bad cassette line {lineno} in {self.path}") from None
        elif record_with is None:
            raise QAForgeError(f"cassette {self.path} does not exist and no recording client given")

    def identity(self) -> str:
        return f"recorded-replay:{self.path.name}"

    def generate(self, prompt: str, sampling: Sampling) -> str:
        key = prompt_key(prompt)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        if self.record_with is None:
            raise QAForgeError(f"cassette {self.path.name} has no entry for prompt {key[:12]}…")
        text = self.record_with.generate(prompt, sampling)
        with self._lock:
            if key not in self._cache:
                self._cache[key] = text
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"prompt_sha256": key, "text": text},
                                        ensure_ascii=False) + "\n")
        return text


class HttpClient:
    """POST {prompt, temperature, max_tokens, seed} -> {"text": ...}."""

    def __init__(self, url: str, api_key_env: str = "RADVQA_TEXTGEN_API_KEY",
                 timeout: float = 60.0, transport: Optional[httpx.BaseTransport] = None):
        self.url = url
        self.api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def identity(self) -> str:
        return f"http:{self.url}"

    def generate(self, prompt: str, sampling: Sampling) -> str:
        headers = {}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise QAForgeError(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        resp = self._client.post(self.url, headers=headers, json={
            "prompt": prompt,
            "temperature": sampling.temperature,
            "max_tokens": sampling.max_tokens,
            "seed": sampling.seed,
        })
        if resp.status_code != 200:
            raise QAForgeError(f"text-generation endpoint returned {resp.status_code}")
        body = resp.json()
        if "text" not in body:
            raise QAForgeError("text-generation response lacks a 'text' field")
        return body["text"]
