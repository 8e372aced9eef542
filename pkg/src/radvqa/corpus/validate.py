"""Manifest validation: every invariant violation is reported with the record id."""

from __future__ import annotations

from dataclasses import dataclass, field

from .records import DatasetManifest


@dataclass(frozen=True)
class Finding:
    record_id: str
    kind: str
    detail: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.findings

    def to_json_obj(self) -> dict:
        return {
            "passed": self.passed,
            "findings": [
                {"record_id": f.record_id, "kind": f.kind, "detail": f.detail}
                for f in self.findings
            ],
        }


def validate(manifest: DatasetManifest) -> ValidationReport:
    """Check every record-level invariant; returns pass=True iff zero findings.

    Dataclass constructors already reject malformed records, so most checks
    here guard records built or mutated programmatically (e.g. via replace()).
    """
    findings: list[Finding] = []
    seen: dict[str, int] = {}
    image_by_id: dict[str, tuple] = {}
    for rec in manifest.records:
        if rec.id in seen:
            findings.append(Finding(rec.id, "duplicate_id", f"id also used by record #{seen[rec.id]}"))
        else:
            seen[rec.id] = len(seen)

        img = rec.image
        key = (img.path, img.width, img.height, img.modality, img.organ)
        prior = image_by_id.get(img.id)
        if prior is None:
            image_by_id[img.id] = key
        elif prior != key:
            findings.append(Finding(rec.id, "image_id_conflict",
                                    f"image id {img.id!r} bound to differing image fields"))
        if img.width <= 0 or img.height <= 0:
            findings.append(Finding(rec.id, "bad_dimensions", f"{img.width}x{img.height}"))

        if rec.kind == "mcq":
            if rec.options is None or len(rec.options) != 4:
                n = 0 if rec.options is None else len(rec.options)
                findings.append(Finding(rec.id, "bad_option_count", f"expected 4 options, got {n}"))
            elif rec.answer not in rec.options:
                findings.append(Finding(rec.id, "answer_not_in_options",
                                        f"answer {rec.answer!r} missing from options"))
        elif rec.options is not None:
            findings.append(Finding(rec.id, "options_on_non_mcq", f"kind={rec.kind}"))

        if rec.kind == "caption" and rec.question:
            findings.append(Finding(rec.id, "caption_with_question", "caption records carry no question"))
        if rec.kind != "caption" and not rec.question.strip():
            findings.append(Finding(rec.id, "empty_question", f"kind={rec.kind}"))

    return ValidationReport(findings=findings)


__all__ = ["Finding", "ValidationReport", "validate"]
