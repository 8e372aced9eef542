"""Parsing and formatting of the generation wire format.

One QA pair per block, blocks separated by blank lines:

    Q: <question>
    A: <answer>
    O: <opt 1> | <opt 2> | <opt 3> | <opt 4>

The O line is present only for multiple-choice pairs and may appear before
or after A. A block may carry Q and A on a single line ("Q: ...? A: ...").
Lines that start with no marker continue the previous field.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

_MARKER = re.compile(r"^(Q|A|O):\s*(.*)$")
_INLINE_A = re.compile(r"^(?P<q>.*?)\s+A:\s*(?P<a>.*)$")
_BLOCK_SPLIT = re.compile(r"\n\s*\n")


@dataclass(frozen=True)
class ParsedPair:
    question: str
    answer: str
    kind: str = "open"
    options: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class RejectedSegment:
    segment: str
    reason: str


def parse_qa(text: str) -> tuple[list[ParsedPair], list[RejectedSegment]]:
    """Total parser: every input splits into accepted pairs and rejects."""
    pairs: list[ParsedPair] = []
    rejects: list[RejectedSegment] = []
    for block in _BLOCK_SPLIT.split(text):
        if not block.strip():
            continue
        parsed = _parse_block(block)
        if isinstance(parsed, ParsedPair):
            pairs.append(parsed)
        else:
            rejects.append(RejectedSegment(segment=block.strip(), reason=parsed))
    return pairs, rejects


def _parse_block(block: str):
    fields: dict[str, Optional[str]] = {"Q": None, "A": None, "O": None}
    current: Optional[str] = None
    for raw in block.splitlines():
        line = raw.strip()
        if not line:
            continue
        m = _MARKER.match(line)
        if m is None:
            if current is None:
                continue  # prose preamble before the first marker
            fields[current] = f"{fields[current]} {line}".strip()
            continue
        key, rest = m.group(1), m.group(2).strip()
        if key == "Q" and fields["A"] is None:
            inline = _INLINE_A.match(rest)
            if inline:
                if fields["Q"] is not None:
                    return "duplicate_marker"
                fields["Q"] = inline.group("q").strip()
                fields["A"] = inline.group("a").strip()
                current = "A"
                continue
        if fields[key] is not None:
            return "duplicate_marker"
        fields[key] = rest
        current = key

    if fields["Q"] is None and fields["A"] is None and fields["O"] is None:
        return "no_markers"
    if fields["Q"] is None:
        return "missing_question"
    if fields["A"] is None:
        return "truncated"
    if not fields["Q"]:
        return "empty_question"
    if not fields["A"]:
        return "empty_answer"

    if fields["O"] is None:
        return ParsedPair(question=fields["Q"], answer=fields["A"], kind="open")
    options = tuple(o.strip() for o in fields["O"].split("|"))
    if len(options) != 4 or any(not o for o in options):
        return "bad_option_count"
    if fields["A"] not in options:
        return "answer_not_in_options"
    return ParsedPair(question=fields["Q"], answer=fields["A"], kind="mcq", options=options)


def format_qa(pairs: list[ParsedPair]) -> str:
    """Inverse of parse_qa on well-formed pairs.

    Well-formed: single-line question and answer, options free of "|" and
    newlines, none of the texts starting with a marker prefix.
    """
    blocks = []
    for p in pairs:
        lines = [f"Q: {p.question}", f"A: {p.answer}"]
        if p.options is not None:
            lines.append("O: " + " | ".join(p.options))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")
