"""Canonical record types for caption and QA corpora, plus JSONL (de)serialization.

The on-disk format is one JSON object per line (UTF-8). Optional fields are
omitted when absent, never written as null, so files diff cleanly and
round-trip byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional

MODALITIES = ("xray", "ct", "mri", "ultrasound", "other")
ORGANS = ("chest", "gastrointestinal", "musculoskeletal", "brain_neuro", "other")
KINDS = ("caption", "open", "short", "mcq")
SOURCES = ("native", "synthetic_case", "synthetic_literature")
QUALITY_TIERS = ("base", "enrichment")


class RecordError(ValueError):
    """A record violates the corpus schema."""


@dataclass(frozen=True)
class ImageRef:
    """Reference to one image: a filesystem path (or URL) plus coarse tags."""

    path: str
    width: int
    height: int
    modality: str = "other"
    organ: str = "other"
    id: Optional[str] = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise RecordError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if self.modality not in MODALITIES:
            raise RecordError(f"unknown modality {self.modality!r}")
        if self.organ not in ORGANS:
            raise RecordError(f"unknown organ {self.organ!r}")
        if self.id is None:
            object.__setattr__(self, "id", Path(str(self.path)).stem)

    def to_json_obj(self) -> dict:
        return {
            "path": self.path,
            "width": self.width,
            "height": self.height,
            "modality": self.modality,
            "organ": self.organ,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ImageRef":
        if not isinstance(obj, dict):
            raise RecordError("image must be an object")
        missing = [k for k in ("path", "width", "height") if k not in obj]
        if missing:
            raise RecordError(f"image missing fields: {', '.join(missing)}")
        return cls(
            path=str(obj["path"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            modality=obj.get("modality", "other"),
            organ=obj.get("organ", "other"),
        )


@dataclass(frozen=True)
class QARecord:
    """One training/eval item: an image plus a question/answer (or caption)."""

    id: str
    image: ImageRef
    kind: str
    question: str
    answer: str
    options: Optional[tuple[str, ...]] = None
    source: str = "native"
    quality_tier: str = "base"

    def __post_init__(self):
        if not self.id:
            raise RecordError("record id must be non-empty")
        if self.kind not in KINDS:
            raise RecordError(f"unknown kind {self.kind!r}")
        if self.source not in SOURCES:
            raise RecordError(f"unknown source {self.source!r}")
        if self.quality_tier not in QUALITY_TIERS:
            raise RecordError(f"unknown quality_tier {self.quality_tier!r}")
        if self.options is not None:
            object.__setattr__(self, "options", tuple(self.options))
        if self.kind == "mcq":
            if self.options is None or len(self.options) != 4:
                n = 0 if self.options is None else len(self.options)
                raise RecordError(f"mcq record needs exactly 4 options, got {n}")
            if self.answer not in self.options:
                raise RecordError("mcq answer must be one of the options")
        elif self.options is not None:
            raise RecordError(f"options only allowed on mcq records, not {self.kind}")
        if self.kind == "caption" and self.question:
            raise RecordError("caption records must have an empty question")

    def to_json_obj(self) -> dict:
        obj = {
            "id": self.id,
            "image": self.image.to_json_obj(),
            "kind": self.kind,
            "question": self.question,
            "answer": self.answer,
        }
        if self.options is not None:
            obj["options"] = list(self.options)
        obj["source"] = self.source
        obj["quality_tier"] = self.quality_tier
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "QARecord":
        if not isinstance(obj, dict):
            raise RecordError("record must be an object")
        missing = [k for k in ("id", "image", "kind") if k not in obj]
        if missing:
            raise RecordError(f"record missing fields: {', '.join(missing)}")
        options = obj.get("options")
        return cls(
            id=str(obj["id"]),
            image=ImageRef.from_json_obj(obj["image"]),
            kind=obj["kind"],
            question=obj.get("question", ""),
            answer=obj.get("answer", ""),
            options=tuple(options) if options is not None else None,
            source=obj.get("source", "native"),
            quality_tier=obj.get("quality_tier", "base"),
        )


@dataclass
class DatasetManifest:
    """An ordered collection of records plus an append-only provenance log."""

    name: str
    records: list[QARecord] = field(default_factory=list)
    provenance: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[QARecord]:
        return iter(self.records)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def with_records(self, records: Iterable[QARecord], note: dict) -> "DatasetManifest":
        """New manifest with the given records and one more provenance entry."""
        return DatasetManifest(
            name=self.name,
            records=list(records),
            provenance=self.provenance + [note],
        )

    def organ_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for r in self.records:
            hist[r.image.organ] = hist.get(r.image.organ, 0) + 1
        return hist

    def modality_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for r in self.records:
            hist[r.image.modality] = hist.get(r.image.modality, 0) + 1
        return hist

    def kind_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for r in self.records:
            hist[r.kind] = hist.get(r.kind, 0) + 1
        return hist


def record_to_line(record: QARecord) -> str:
    return json.dumps(record.to_json_obj(), ensure_ascii=False, separators=(", ", ": "))


def record_from_line(line: str) -> QARecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError(f"invalid JSON: {exc}") from exc
    return QARecord.from_json_obj(obj)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write records as JSONL at `path` and provenance as a `.provenance.json` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in manifest.records:
            fh.write(record_to_line(record) + "\n")
    sidecar = path.with_suffix(path.suffix + ".provenance.json")
    sidecar.write_text(
        json.dumps({"name": manifest.name, "provenance": manifest.provenance}, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return path


def load_manifest(path: str | Path, name: Optional[str] = None) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_line(line))
            except RecordError as exc:
                raise RecordError(f"{path}:{lineno}: {exc}") from exc
    sidecar = path.with_suffix(path.suffix + ".provenance.json")
    provenance: list[dict] = []
    manifest_name = name or path.stem
    if sidecar.is_file():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        provenance = meta.get("provenance", [])
        manifest_name = name or meta.get("name", manifest_name)
    return DatasetManifest(name=manifest_name, records=records, provenance=provenance)


__all__ = [
    "MODALITIES",
    "ORGANS",
    "KINDS",
    "SOURCES",
    "QUALITY_TIERS",
    "RecordError",
    "ImageRef",
    "QARecord",
    "DatasetManifest",
    "record_to_line",
    "record_from_line",
    "save_manifest",
    "load_manifest",
    "replace",
]
