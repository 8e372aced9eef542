"""Evaluation reports: metric tables and per-organ tallies.

Two markdown layouts are provided. The accuracy table has one row per
dataset and one "mean ± std" percentage cell per method column, with
"--" for absent combinations. The organ table has one row per organ
class and an "x/n" tally cell, optionally with a parenthesized baseline
tally in the same cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from radvqa.corpus import DatasetManifest, ORGANS

from .judge import JudgeVerdict

__all__ = [
    "ReportError",
    "ORGAN_LABELS",
    "MetricValue",
    "OrganRow",
    "OrganReport",
    "organ_report",
    "EvalReport",
    "markdown_accuracy_table",
    "write_report_json",
]

ORGAN_LABELS = {
    "chest": "Chest",
    "gastrointestinal": "Gastrointestinal",
    "musculoskeletal": "Musculoskeletal",
    "brain_neuro": "Brain and Neuro",
    "other": "Other",
}


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class MetricValue:
    mean: float
    std: float = 0.0

    def __post_init__(self):
        if self.std < 0:
            raise ReportError("std cannot be negative")

    def as_pct(self) -> str:
        return f"{100 * self.mean:.2f} ± {100 * self.std:.2f}"


@dataclass(frozen=True)
class OrganRow:
    organ: str
    correct: int
    total: int
    baseline: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.organ not in ORGANS:
            raise ReportError(f"unknown organ {self.organ!r}")
        if not (0 <= self.correct <= self.total):
            raise ReportError(f"{self.organ}: correct {self.correct} outside 0..{self.total}")

    @property
    def cell(self) -> str:
        return f"{self.correct}/{self.total}"

    @property
    def label(self) -> str:
        return ORGAN_LABELS[self.organ]


@dataclass(frozen=True)
class OrganReport:
    rows: tuple[OrganRow, ...]

    @property
    def total(self) -> int:
        return sum(r.total for r in self.rows)

    def to_markdown(self) -> str:
        lines = ["| Organ-level Pathologies | Accuracy |", "| --- | --- |"]
        for row in self.rows:
            cell = row.cell
            if row.baseline is not None:
                cell += f" ({row.baseline[0]}/{row.baseline[1]})"
            lines.append(f"| {row.label} | {cell} |")
        return "\n".join(lines) + "\n"

    def to_json_obj(self) -> dict:
        return {"rows": [{"organ": r.organ, "correct": r.correct, "total": r.total,
                          "baseline": list(r.baseline) if r.baseline else None}
                         for r in self.rows],
                "total": self.total}


def organ_report(verdicts: Iterable[JudgeVerdict], manifest: DatasetManifest,
                 baseline: Optional[Mapping[str, tuple[int, int]]] = None) -> OrganReport:
    """Tally correct/total per organ class, ordered as in `ORGANS`."""
    organ_of = {r.id: r.image.organ for r in manifest.records}
    tallies: dict[str, list[int]] = {}
    for v in verdicts:
        organ = organ_of.get(v.item_id)
        if organ is None:
            raise ReportError(f"verdict item {v.item_id!r} matches no record in "
                              f"manifest {manifest.name!r}")
        t = tallies.setdefault(organ, [0, 0])
        t[1] += 1
        t[0] += v.verdict == "correct"
    rows = tuple(OrganRow(organ=o, correct=tallies[o][0], total=tallies[o][1],
                          baseline=tuple(baseline[o]) if baseline and o in baseline else None)
                 for o in ORGANS if o in tallies)
    return OrganReport(rows=rows)


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    metrics: Mapping[str, MetricValue]
    organs: Optional[OrganReport] = None
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.metrics.items():
            if "accuracy" in name and not (0.0 <= value.mean <= 1.0):
                raise ReportError(f"{name} must lie in [0, 1], got {value.mean}")

    def to_json_obj(self) -> dict:
        return {
            "dataset": self.dataset,
            "metrics": {k: {"mean": v.mean, "std": v.std} for k, v in self.metrics.items()},
            "organs": self.organs.to_json_obj() if self.organs else None,
            "metadata": dict(self.metadata),
        }


def markdown_accuracy_table(rows: Sequence[tuple[str, Mapping[str, Optional[MetricValue]]]],
                            columns: Sequence[str], row_header: str = "Dataset") -> str:
    lines = ["| " + " | ".join([row_header, *columns]) + " |",
             "| " + " | ".join(["---"] * (len(columns) + 1)) + " |"]
    for label, cells in rows:
        rendered = [cells[c].as_pct() if cells.get(c) is not None else "--" for c in columns]
        lines.append("| " + " | ".join([label, *rendered]) + " |")
    return "\n".join(lines) + "\n"


def write_report_json(report: EvalReport, path: str | Path) -> dict:
    obj = report.to_json_obj()
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return obj
