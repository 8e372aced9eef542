"""Ingestion adapters: turn a directory with a JSONL index into a validated manifest.

Malformed lines are quarantined into the result's reject list (and optionally a
sidecar file), never silently dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .records import DatasetManifest, QARecord, RecordError, record_from_line

ADAPTERS = ("caption_pairs", "qa_pairs", "mcq_pairs")
INDEX_FILENAME = "index.jsonl"

_ADAPTER_KINDS = {
    "caption_pairs": {"caption"},
    "qa_pairs": {"open", "short"},
    "mcq_pairs": {"mcq"},
}


class IngestError(ValueError):
    """Fatal ingestion problem (missing index, unknown adapter)."""


@dataclass(frozen=True)
class RejectedLine:
    lineno: int
    reason: str
    line: str


@dataclass
class IngestResult:
    manifest: DatasetManifest
    rejects: list[RejectedLine] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.rejects


def ingest(path: str | Path, adapter: str, name: Optional[str] = None,
           check_images: bool = True) -> IngestResult:
    """Read `<path>/index.jsonl` under the given adapter.

    Every well-formed line becomes one validated QARecord; problem lines are
    collected as rejects with line number and reason. Image paths are resolved
    relative to `path`; a missing image file rejects the line when
    `check_images` is set.
    """
    if adapter not in ADAPTERS:
        raise IngestError(f"unknown adapter {adapter!r}; expected one of {ADAPTERS}")
    root = Path(path)
    index = root / INDEX_FILENAME
    if not index.is_file():
        raise IngestError(f"missing index file: {index}")

    allowed_kinds = _ADAPTER_KINDS[adapter]
    records: list[QARecord] = []
    rejects: list[RejectedLine] = []
    seen_ids: set[str] = set()
    with index.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = record_from_line(line)
            except RecordError as exc:
                rejects.append(RejectedLine(lineno, str(exc), line))
                continue
            if record.kind not in allowed_kinds:
                rejects.append(RejectedLine(
                    lineno, f"kind {record.kind!r} not accepted by adapter {adapter}", line))
                continue
            if record.id in seen_ids:
                rejects.append(RejectedLine(lineno, f"duplicate record id {record.id!r}", line))
                continue
            if check_images and not _resolvable(record, root):
                rejects.append(RejectedLine(
                    lineno, f"image path unresolvable: {record.image.path}", line))
                continue
            seen_ids.add(record.id)
            records.append(record)

    manifest_name = name or root.name
    manifest = DatasetManifest(
        name=manifest_name,
        records=records,
        provenance=[{
            "op": "ingest",
            "adapter": adapter,
            "index": str(index),
            "accepted": len(records),
            "rejected": len(rejects),
        }],
    )
    return IngestResult(manifest=manifest, rejects=rejects)


def _resolvable(record: QARecord, root: Path) -> bool:
    p = record.image.path
    if p.startswith(("http://", "https://")):
        return True
    candidate = Path(p)
    if not candidate.is_absolute():
        candidate = root / candidate
    return candidate.exists()


def write_rejects(rejects: list[RejectedLine], path: str | Path) -> Path:
    """Quarantine rejects as JSONL next to the ingested output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rej in rejects:
            fh.write(json.dumps(
                {"lineno": rej.lineno, "reason": rej.reason, "line": rej.line},
                ensure_ascii=False) + "\n")
    return path


__all__ = ["ADAPTERS", "INDEX_FILENAME", "IngestError", "RejectedLine", "IngestResult",
           "ingest", "write_rejects"]
