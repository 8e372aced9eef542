"""Annealing and filtering: enrich a large base corpus with a small
high-quality corpus, weighted toward the most common pathology terms.

The mix is a fixed-fraction static blend, deliberately not an upsampling
schedule: rare classes are not amplified, the most frequent terms are
reinforced.
"""

from __future__ import annotations

import csv
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..corpus import DatasetManifest, QARecord
from ..corpus.records import replace


class MixerError(ValueError):
    pass


@dataclass(frozen=True)
class MixSpec:
    base: str
    enrichment: str
    enrichment_fraction: float
    top_k_pathologies: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.enrichment_fraction < 1.0):
            raise MixerError(f"enrichment_fraction must be in (0,1), got {self.enrichment_fraction}")
        if self.top_k_pathologies < 1:
            raise MixerError("top_k_pathologies must be >= 1")


@dataclass
class PathologyIndex:
    """Term frequencies over a manifest plus per-record term matches."""

    frequencies: dict[str, int]
    matched: int
    unmatched: int
    record_terms: dict[str, list[str]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.matched + self.unmatched


def _compile_taxonomy(taxonomy: dict[str, list[str]]) -> list[tuple[str, re.Pattern]]:
    compiled = []
    for term in sorted(taxonomy):
        variants = [term] + list(taxonomy[term])
        alternation = "|".join(re.escape(v) for v in sorted(set(variants), key=str.lower))
        compiled.append((term, re.compile(rf"\b(?:{alternation})\b", re.IGNORECASE)))
    return compiled


def index_pathologies(manifest: DatasetManifest, taxonomy: dict[str, list[str]]) -> PathologyIndex:
    """Case-insensitive whole-word term counting over question+answer text.

    `taxonomy` maps canonical term -> list of synonyms; a record may increment
    several terms but each term at most once per record.
    """
    if not taxonomy:
        raise MixerError("taxonomy must be non-empty")
    patterns = _compile_taxonomy(taxonomy)
    frequencies = {term: 0 for term, _ in patterns}
    record_terms: dict[str, list[str]] = {}
    matched = 0
    for rec in manifest.records:
        text = f"{rec.question} {rec.answer}"
        hits = [term for term, pat in patterns if pat.search(text)]
        if hits:
            matched += 1
            record_terms[rec.id] = hits
            for term in hits:
                frequencies[term] += 1
    return PathologyIndex(
        frequencies=frequencies,
        matched=matched,
        unmatched=len(manifest.records) - matched,
        record_terms=record_terms,
    )


def top_terms(index: PathologyIndex, k: int) -> list[str]:
    """The k most frequent matched terms; ties broken lexicographically."""
    ranked = sorted(
        (t for t, f in index.frequencies.items() if f > 0),
        key=lambda t: (-index.frequencies[t], t),
    )
    return ranked[:k]


def filter_relevant(manifest: DatasetManifest, index: PathologyIndex, top_k: int) -> DatasetManifest:
    """Keep records matching any of the k most frequent terms."""
    distinct = sum(1 for f in index.frequencies.values() if f > 0)
    warned = top_k > distinct
    kept_terms = set(top_terms(index, min(top_k, distinct)))
    kept = [rec for rec in manifest.records
            if kept_terms.intersection(index.record_terms.get(rec.id, ()))]
    note = {
        "op": "filter_relevant",
        "top_k": top_k,
        "kept_terms": sorted(kept_terms),
        "kept": len(kept),
        "dropped": len(manifest.records) - len(kept),
    }
    if warned:
        note["warning"] = f"top_k={top_k} exceeds {distinct} distinct matched terms; kept all matched"
    return manifest.with_records(kept, note)


def anneal(base_manifest: DatasetManifest, enrichment_manifest: DatasetManifest,
           spec: MixSpec) -> DatasetManifest:
    """Fold the full enrichment set into a seeded sample of the base set.

    All enrichment records are kept; base records are sampled without
    replacement so the enrichment fraction holds within one record. Ids are
    prefixed by source manifest name to keep the union collision-free, and the
    output order is a deterministic seeded shuffle.
    """
    n_enr = len(enrichment_manifest.records)
    if n_enr == 0:
        raise MixerError("enrichment manifest is empty")
    bad_tier = [r.id for r in enrichment_manifest.records if r.quality_tier != "enrichment"]
    if bad_tier:
        raise MixerError(
            f"enrichment records must be tagged quality_tier=enrichment; offending ids: {bad_tier[:5]}")
    f = spec.enrichment_fraction
    n_base = round(n_enr * (1.0 - f) / f)
    if n_base > len(base_manifest.records):
        raise MixerError(
            f"base manifest too small: need {n_base} records for fraction {f}, have {len(base_manifest.records)}")

    rng = random.Random(spec.seed)
    base_sample = rng.sample(base_manifest.records, n_base)

    def prefixed(records, prefix):
        return [replace(r, id=f"{prefix}/{r.id}") for r in records]

    mixed = (prefixed(base_sample, base_manifest.name)
             + prefixed(enrichment_manifest.records, enrichment_manifest.name))
    rng.shuffle(mixed)
    note = {
        "op": "anneal",
        "spec": {
            "base": spec.base, "enrichment": spec.enrichment,
            "enrichment_fraction": f, "top_k_pathologies": spec.top_k_pathologies,
            "seed": spec.seed,
        },
        "base_sampled": n_base,
        "enrichment_kept": n_enr,
    }
    return DatasetManifest(
        name=f"{base_manifest.name}+{enrichment_manifest.name}" ,
        records=mixed,
        provenance=base_manifest.provenance + enrichment_manifest.provenance + [note],
    )


def stats_report(manifest: DatasetManifest, index: Optional[PathologyIndex] = None,
                 top_k: int = 10) -> dict:
    """Distribution report: organ, modality, kind histograms and top-k terms."""
    report = {
        "name": manifest.name,
        "size": len(manifest.records),
        "organ": manifest.organ_histogram(),
        "modality": manifest.modality_histogram(),
        "kind": manifest.kind_histogram(),
    }
    if index is not None:
        report["top_terms"] = {t: index.frequencies[t] for t in top_terms(index, top_k)}
        report["matched"] = index.matched
        report["unmatched"] = index.unmatched
    return report


def write_stats(report: dict, json_path: str | Path, csv_path: str | Path) -> None:
    json_path, csv_path = Path(json_path), Path(csv_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "key", "count"])
        for section in ("organ", "modality", "kind", "top_terms"):
            for key, count in sorted(report.get(section, {}).items()):
                writer.writerow([section, key, count])


def load_taxonomy(path: str | Path) -> dict[str, list[str]]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict) or not obj:
        raise MixerError(f"taxonomy file {path} must be a non-empty object of term -> synonyms")
    return {str(k): [str(s) for s in v] for k, v in obj.items()}


__all__ = [
    "MixerError", "MixSpec", "PathologyIndex",
    "index_pathologies", "top_terms", "filter_relevant", "anneal",
    "stats_report", "write_stats", "load_taxonomy",
]
